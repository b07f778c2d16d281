# SPDX-License-Identifier: Apache-2.0
"""Python front end for the attrlab C++ core.

Configuration-style arguments accept plain dicts; reports come back as dicts.
"""
import json as _json

from . import _core
from ._core import (  # noqa: F401
    AttributionContext as _AttributionContext,
    CheckpointError,
    Dataset,
    Error,
    Instance,
    InstanceScores,
    InvalidArgument,
    Model,
    NeuronId,
    ParseError,
    RankedNeurons,
    SyntheticNli,
    dcns,
    dcns_upper_bound,
    gs_scores,
    if_scores,
    ia_neurons,
    instance_overlap,
    instance_scores,
    lexical_overlap,
    load_checkpoint,
    load_data_dir,
    make_ranked,
    model_input,
    na_instances,
    random_ranking,
    regression_coefficient,
    save_checkpoint,
    select_fraction,
    top_r,
    unique_instance_count,
    head_gradient,
    head_hessian,
    prob_grad_wrt_neurons,
    attribute_neurons,
    global_ranking,
)

__version__ = _core.__version__


def _dump(cfg):
    return "" if cfg is None else _json.dumps(cfg)


def gen_synthetic_nli(config=None, seed=0):
    return _core.gen_synthetic_nli(_dump(config), seed)


def init_model(config=None):
    return _core.init_model(_dump(config))


def train(model, dataset, hyper=None):
    """Returns (trained model, [(loss, accuracy) per epoch])."""
    return _core.train(model, dataset, _dump(hyper))


def AttributionContext(model, train_set, options=None):
    return _AttributionContext(model, train_set, _dump(options))


def model_config(model):
    return _json.loads(model.config_json)


def retrain_eval(original, subset, full_train, test_set, hyper=None, seed=0):
    """Returns (accuracy, percent of original test predictions preserved)."""
    return _core.retrain_eval(original, subset, full_train, test_set, _dump(hyper), seed)


def run_test(context, test_set, selector, kind, r, seed=0):
    return _json.loads(_core.run_test(context, test_set, selector, kind, r, seed))


def run_protocol(context, test_set, selectors=("na", "if_neuron", "gs_neuron", "random"),
                 seeds=(0, 1, 2), sufficiency_r=1, comprehensiveness_r=100):
    return _json.loads(_core.run_protocol(context, test_set, list(selectors), list(seeds),
                                          sufficiency_r, comprehensiveness_r))


def diversity_metrics(subset, model, jobs=1):
    return _json.loads(_core.diversity_metrics(subset, model, jobs))


def artifact_detection(context, heuristic_set, methods=("gs", "if", "na-instances"), ks=(1, 10), seed=0):
    return _json.loads(_core.artifact_detection(context, heuristic_set, list(methods), list(ks), seed))
