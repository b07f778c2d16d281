// SPDX-License-Identifier: Apache-2.0
#include "attrlab/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "attrlab/backprop.hpp"

namespace attrlab {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2.0;

const char* activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "gelu"; }

double act_fn(Activation a, double x) {
  if (a == Activation::kRelu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

double act_grad(Activation a, double x) {
  if (a == Activation::kRelu) return x > 0.0 ? 1.0 : 0.0;
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + x * pdf;
}

Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, Matrix& xhat,
                  Vector& rstd) {
  const auto n = x.rows();
  const auto d = static_cast<double>(x.cols());
  xhat.resize(x.rows(), x.cols());
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mu).square().sum() / d;
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mu) * rstd(i);
  }
  Matrix y = (xhat.array().rowwise() * gain.array()).matrix();
  y.rowwise() += bias;
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& rstd,
                           const RowVector& gain, RowVector* dgain, RowVector* dbias) {
  if (dgain) *dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * gain.array()).matrix();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_dxhat = dxhat.row(i).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(i).dot(xhat.row(i)) / d;
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - mean_dxhat -
                           xhat.row(i).array() * mean_dxhat_xhat)
                              .matrix();
  }
  return dx;
}

void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
}

std::vector<std::pair<double*, std::size_t>> flat_views(Parameters& p) {
  std::vector<std::pair<double*, std::size_t>> out;
  for_each_tensor(p, [&](const std::string&, auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw InvalidArgument(std::string("model config: ") + msg);
  };
  need(vocab_size >= 4, "vocab_size must be at least 4");
  need(d_model >= 1 && n_heads >= 1, "d_model and n_heads must be positive");
  need(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  need(n_layers >= 1, "n_layers must be positive");
  need(d_mlp >= 1, "d_mlp must be positive");
  need(max_seq_len >= 3, "max_seq_len must be at least 3");
  need(n_classes >= 2, "n_classes must be at least 2");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},       {"n_layers", n_layers},
          {"n_heads", n_heads},       {"d_mlp", d_mlp},           {"max_seq_len", max_seq_len},
          {"n_classes", n_classes},   {"activation", activation_name(activation)},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_mlp = j.value("d_mlp", c.d_mlp);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.seed = j.value("seed", c.seed);
  const std::string act = j.value("activation", std::string("gelu"));
  if (act == "relu")
    c.activation = Activation::kRelu;
  else if (act == "gelu")
    c.activation = Activation::kGelu;
  else
    throw InvalidArgument("model config: unknown activation '" + act + "'");
  c.validate();
  return c;
}

Parameters Parameters::zeros_like(const Parameters& p) {
  Parameters z = p;
  for_each_tensor(z, [](const std::string&, auto& t) { t.setZero(); });
  return z;
}

bool Parameters::all_finite() const {
  bool ok = true;
  for_each_tensor(*this, [&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

std::size_t Parameters::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const std::string&, const auto& t) {
    n += static_cast<std::size_t>(t.size());
  });
  return n;
}

bool Parameters::operator==(const Parameters& other) const {
  if (!(config == other.config) || layers.size() != other.layers.size()) return false;
  std::vector<const double*> a, b;
  std::vector<Eigen::Index> sa, sb;
  for_each_tensor(*this, [&](const std::string&, const auto& t) {
    a.push_back(t.data());
    sa.push_back(t.size());
  });
  for_each_tensor(other, [&](const std::string&, const auto& t) {
    b.push_back(t.data());
    sb.push_back(t.size());
  });
  if (sa != sb) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (Eigen::Index k = 0; k < sa[i]; ++k)
      if (std::bit_cast<std::uint64_t>(a[i][k]) != std::bit_cast<std::uint64_t>(b[i][k]))
        return false;
  return true;
}

InterventionSpec InterventionSpec::deny(std::span<const NeuronId> neurons) {
  InterventionSpec s;
  s.mode = Mode::kDenylist;
  for (const auto& n : neurons) s.entries[n] = NeuronAction::zero();
  return s;
}

InterventionSpec InterventionSpec::allow(std::span<const NeuronId> neurons) {
  InterventionSpec s;
  s.mode = Mode::kAllowlist;
  for (const auto& n : neurons) s.entries[n] = NeuronAction::scale(1.0);
  return s;
}

RowVector InterventionSpec::layer_factors(std::uint32_t layer, std::size_t d_mlp) const {
  RowVector f = RowVector::Constant(static_cast<Eigen::Index>(d_mlp),
                                    mode == Mode::kAllowlist ? 0.0 : 1.0);
  auto it = entries.lower_bound(NeuronId{layer, 0});
  for (; it != entries.end() && it->first.layer == layer; ++it) {
    if (it->first.unit >= d_mlp)
      throw InvalidArgument("intervention unit out of range: " + std::to_string(it->first.unit));
    f(it->first.unit) = it->second.factor();
  }
  return f;
}

Parameters init_model(const ModelConfig& config) {
  config.validate();
  Parameters p;
  p.config = config;
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto h = static_cast<Eigen::Index>(config.d_mlp);
  p.token_embedding = Matrix::Zero(static_cast<Eigen::Index>(config.vocab_size), d);
  p.position_embedding = Matrix::Zero(static_cast<Eigen::Index>(config.max_seq_len), d);
  p.layers.resize(config.n_layers);
  for (auto& L : p.layers) {
    L.ln1_gain = RowVector::Ones(d);
    L.ln1_bias = RowVector::Zero(d);
    L.w_query = L.w_key = L.w_value = L.w_attn_out = Matrix::Zero(d, d);
    L.b_query = L.b_key = L.b_value = L.b_attn_out = RowVector::Zero(d);
    L.ln2_gain = RowVector::Ones(d);
    L.ln2_bias = RowVector::Zero(d);
    L.w_mlp_in = Matrix::Zero(d, h);
    L.b_mlp_in = RowVector::Zero(h);
    L.w_mlp_out = Matrix::Zero(h, d);
    L.b_mlp_out = RowVector::Zero(d);
  }
  p.final_gain = RowVector::Ones(d);
  p.final_bias = RowVector::Zero(d);
  p.head_weight = Matrix::Zero(static_cast<Eigen::Index>(config.n_classes), d);
  p.head_bias = RowVector::Zero(static_cast<Eigen::Index>(config.n_classes));

  // Weight matrices ~ N(0, 1/fan_in); embeddings use fan_in = d_model.
  Rng rng(config.seed);
  const double sd_d = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  const double sd_h = 1.0 / std::sqrt(static_cast<double>(config.d_mlp));
  fill_normal(p.token_embedding, rng, sd_d);
  fill_normal(p.position_embedding, rng, sd_d);
  for (auto& L : p.layers) {
    fill_normal(L.w_query, rng, sd_d);
    fill_normal(L.w_key, rng, sd_d);
    fill_normal(L.w_value, rng, sd_d);
    fill_normal(L.w_attn_out, rng, sd_d);
    fill_normal(L.w_mlp_in, rng, sd_d);
    fill_normal(L.w_mlp_out, rng, sd_h);
  }
  fill_normal(p.head_weight, rng, sd_d);
  return p;
}

Tape forward_tape(const Parameters& params, std::span<const TokenId> tokens,
                  const ForwardOptions& opts) {
  const auto& cfg = params.config;
  if (tokens.empty()) throw InvalidArgument("forward: empty token sequence");
  if (tokens.size() > cfg.max_seq_len)
    throw InvalidArgument("forward: sequence length " + std::to_string(tokens.size()) +
                          " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Tape tape;
  tape.tokens.assign(tokens.begin(), tokens.end());
  Matrix x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const TokenId tok = tokens[static_cast<std::size_t>(t)];
    if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab_size)
      throw InvalidArgument("forward: token id out of range: " + std::to_string(tok));
    x.row(t) = params.token_embedding.row(tok) + params.position_embedding.row(t);
  }

  tape.layers.resize(cfg.n_layers);
  tape.trace.mlp_activations.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& L = params.layers[l];
    auto& c = tape.layers[l];
    c.x_in = x;
    c.y1 = layer_norm(x, L.ln1_gain, L.ln1_bias, c.xhat1, c.rstd1);
    c.q = c.y1 * L.w_query;
    c.q.rowwise() += L.b_query;
    c.k = c.y1 * L.w_key;
    c.k.rowwise() += L.b_key;
    c.v = c.y1 * L.w_value;
    c.v.rowwise() += L.b_value;
    c.heads.resize(T, d);
    c.attn.resize(cfg.n_heads);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      const auto off = static_cast<Eigen::Index>(hd) * dh;
      Matrix scores = c.q.middleCols(off, dh) * c.k.middleCols(off, dh).transpose() * inv_sqrt_dh;
      Matrix& a = c.attn[hd];
      a = Matrix::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double mx = scores.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          a(i, j) = std::exp(scores(i, j) - mx);
          z += a(i, j);
        }
        a.row(i).head(i + 1) /= z;
      }
      c.heads.middleCols(off, dh) = a * c.v.middleCols(off, dh);
    }
    Matrix attn_out = c.heads * L.w_attn_out;
    attn_out.rowwise() += L.b_attn_out;
    c.x_mid = x + attn_out;

    c.y2 = layer_norm(c.x_mid, L.ln2_gain, L.ln2_bias, c.xhat2, c.rstd2);
    c.pre = c.y2 * L.w_mlp_in;
    c.pre.rowwise() += L.b_mlp_in;
    Matrix act = c.pre.unaryExpr([&](double v) { return act_fn(cfg.activation, v); });

    const bool scaled = opts.scaled_layer == static_cast<int>(l);
    if (opts.intervention && !opts.intervention->is_identity()) {
      c.act_factor = opts.intervention->layer_factors(static_cast<std::uint32_t>(l), cfg.d_mlp);
      if (scaled) c.act_factor *= opts.scale;
      c.act_used = (act.array().rowwise() * c.act_factor.array()).matrix();
    } else if (scaled) {
      c.act_factor = RowVector::Constant(act.cols(), opts.scale);
      c.act_used = act * opts.scale;
    } else {
      c.act_factor = RowVector::Ones(act.cols());
      c.act_used = std::move(act);
    }
    if (opts.act_offset && l < opts.act_offset->size() && (*opts.act_offset)[l].size() > 0)
      c.act_used += (*opts.act_offset)[l];
    tape.trace.mlp_activations[l] = c.act_used;

    Matrix mlp_out = c.act_used * L.w_mlp_out;
    mlp_out.rowwise() += L.b_mlp_out;
    x = c.x_mid + mlp_out;
  }

  Matrix last = x.row(T - 1);
  Matrix xhat;
  Vector rstd;
  Matrix h = layer_norm(last, params.final_gain, params.final_bias, xhat, rstd);
  tape.final_xhat = xhat.row(0);
  tape.final_rstd = rstd(0);
  tape.trace.last_hidden = h.row(0).transpose();
  tape.trace.logits = params.head_weight * tape.trace.last_hidden + params.head_bias.transpose();
  tape.trace.probs = softmax(tape.trace.logits);
  tape.trace.predicted = argmax(tape.trace.probs);
  return tape;
}

std::vector<Matrix> backward(const Parameters& params, const Tape& tape, const Vector& dlogits,
                             Parameters* grads, int stop_layer) {
  const auto& cfg = params.config;
  const auto T = static_cast<Eigen::Index>(tape.tokens.size());
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> d_act(cfg.n_layers);

  const Vector& h = tape.trace.last_hidden;
  if (grads) {
    grads->head_weight += dlogits * h.transpose();
    grads->head_bias += dlogits.transpose();
  }
  Matrix dh_row = (params.head_weight.transpose() * dlogits).transpose();
  Matrix xhat_f = tape.final_xhat;
  Vector rstd_f = Vector::Constant(1, tape.final_rstd);
  Matrix dlast = layer_norm_backward(dh_row, xhat_f, rstd_f, params.final_gain,
                                     grads ? &grads->final_gain : nullptr,
                                     grads ? &grads->final_bias : nullptr);
  Matrix dx = Matrix::Zero(T, d);
  dx.row(T - 1) = dlast.row(0);

  for (int l = static_cast<int>(cfg.n_layers) - 1; l >= 0; --l) {
    const auto& L = params.layers[static_cast<std::size_t>(l)];
    const auto& c = tape.layers[static_cast<std::size_t>(l)];
    LayerParams* G = grads ? &grads->layers[static_cast<std::size_t>(l)] : nullptr;

    if (G) {
      G->w_mlp_out += c.act_used.transpose() * dx;
      G->b_mlp_out += dx.colwise().sum();
    }
    d_act[static_cast<std::size_t>(l)] = dx * L.w_mlp_out.transpose();
    if (stop_layer == l) return d_act;

    Matrix dpre = (d_act[static_cast<std::size_t>(l)].array().rowwise() * c.act_factor.array())
                      .matrix();
    for (Eigen::Index i = 0; i < dpre.size(); ++i)
      dpre.data()[i] *= act_grad(cfg.activation, c.pre.data()[i]);
    if (G) {
      G->w_mlp_in += c.y2.transpose() * dpre;
      G->b_mlp_in += dpre.colwise().sum();
    }
    Matrix dy2 = dpre * L.w_mlp_in.transpose();
    Matrix dx_mid = dx + layer_norm_backward(dy2, c.xhat2, c.rstd2, L.ln2_gain,
                                             G ? &G->ln2_gain : nullptr,
                                             G ? &G->ln2_bias : nullptr);

    if (G) {
      G->w_attn_out += c.heads.transpose() * dx_mid;
      G->b_attn_out += dx_mid.colwise().sum();
    }
    Matrix dheads = dx_mid * L.w_attn_out.transpose();
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      const auto off = static_cast<Eigen::Index>(hd) * dh;
      const Matrix& a = c.attn[hd];
      Matrix dout = dheads.middleCols(off, dh);
      Matrix da = dout * c.v.middleCols(off, dh).transpose();
      dv.middleCols(off, dh) = a.transpose() * dout;
      Matrix ds(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double row_dot = a.row(i).dot(da.row(i));
        ds.row(i) = (a.row(i).array() * (da.row(i).array() - row_dot)).matrix();
      }
      ds *= inv_sqrt_dh;
      dq.middleCols(off, dh) = ds * c.k.middleCols(off, dh);
      dk.middleCols(off, dh) = ds.transpose() * c.q.middleCols(off, dh);
    }
    if (G) {
      G->w_query += c.y1.transpose() * dq;
      G->b_query += dq.colwise().sum();
      G->w_key += c.y1.transpose() * dk;
      G->b_key += dk.colwise().sum();
      G->w_value += c.y1.transpose() * dv;
      G->b_value += dv.colwise().sum();
    }
    Matrix dy1 = dq * L.w_query.transpose() + dk * L.w_key.transpose() +
                 dv * L.w_value.transpose();
    dx = dx_mid + layer_norm_backward(dy1, c.xhat1, c.rstd1, L.ln1_gain,
                                      G ? &G->ln1_gain : nullptr, G ? &G->ln1_bias : nullptr);
  }

  if (grads) {
    for (Eigen::Index t = 0; t < T; ++t) {
      grads->token_embedding.row(tape.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
      grads->position_embedding.row(t) += dx.row(t);
    }
  }
  return d_act;
}

Vector cross_entropy_dlogits(const Vector& probs, int label) {
  Vector g = probs;
  g(label) -= 1.0;
  return g;
}

Vector probability_dlogits(const Vector& probs, int target) {
  Vector g = -probs(target) * probs;
  g(target) += probs(target);
  return g;
}

ForwardTrace forward(const Parameters& params, std::span<const TokenId> tokens,
                     const std::optional<InterventionSpec>& intervention) {
  ForwardOptions opts;
  if (intervention) opts.intervention = &*intervention;
  return forward_tape(params, tokens, opts).trace;
}

int argmax(const Vector& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

double loss(const ForwardTrace& trace, int label) {
  const auto& z = trace.logits;
  if (label < 0 || label >= z.size()) throw InvalidArgument("loss: label out of range");
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return lse - z(label);
}

int predict(const Parameters& params, const Instance& inst) {
  const auto tokens = model_input(inst, params.config.max_seq_len);
  return forward(params, tokens).predicted;
}

std::vector<int> predict_all(const Parameters& params, const Dataset& ds, int jobs) {
  std::vector<int> out(ds.size());
  parallel_for(ds.size(), jobs, [&](std::size_t i) { out[i] = predict(params, ds[i]); });
  return out;
}

double accuracy(const Parameters& params, const Dataset& ds, int jobs) {
  if (ds.size() == 0) return 0.0;
  const auto preds = predict_all(params, ds, jobs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hit += preds[i] == ds[i].label;
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

nlohmann::ordered_json TrainHyper::to_json() const {
  return {{"lr", lr},       {"epochs", epochs}, {"batch_size", batch_size}, {"seed", seed},
          {"beta1", beta1}, {"beta2", beta2},   {"eps", eps}};
}

TrainHyper TrainHyper::from_json(const nlohmann::json& j) {
  TrainHyper h;
  h.lr = j.value("lr", h.lr);
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.seed = j.value("seed", h.seed);
  h.beta1 = j.value("beta1", h.beta1);
  h.beta2 = j.value("beta2", h.beta2);
  h.eps = j.value("eps", h.eps);
  if (h.batch_size == 0) throw InvalidArgument("train config: batch_size must be positive");
  if (h.lr < 0.0) throw InvalidArgument("train config: lr must be non-negative");
  return h;
}

TrainResult train(Parameters params, const Dataset& train_set, const TrainHyper& hp) {
  if (train_set.size() == 0) throw InvalidArgument("train: empty training set");
  if (hp.batch_size == 0) throw InvalidArgument("train: batch_size must be positive");
  const auto& cfg = params.config;
  std::vector<TokenSeq> inputs;
  inputs.reserve(train_set.size());
  for (const auto& inst : train_set.instances) inputs.push_back(model_input(inst, cfg.max_seq_len));

  Parameters m = Parameters::zeros_like(params);
  Parameters v = Parameters::zeros_like(params);
  auto pv = flat_views(params);
  auto mv = flat_views(m);
  auto vv = flat_views(v);

  TrainResult result;
  Rng rng(hp.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      Parameters grads = Parameters::zeros_like(params);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        Tape tape = forward_tape(params, inputs[i]);
        const double l = loss(tape.trace, train_set[i].label);
        if (!std::isfinite(l)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", step " << step << ", instance "
              << train_set[i].id << " (loss=" << l << ")";
          throw TrainingDiverged(msg.str());
        }
        backward(params, tape, cross_entropy_dlogits(tape.trace.probs, train_set[i].label) * inv_b,
                 &grads);
      }
      ++step;
      auto gv = flat_views(grads);
      const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
      for (std::size_t t = 0; t < pv.size(); ++t) {
        double* p = pv[t].first;
        double* mm = mv[t].first;
        double* vvp = vv[t].first;
        const double* g = gv[t].first;
        for (std::size_t k = 0; k < pv[t].second; ++k) {
          mm[k] = hp.beta1 * mm[k] + (1.0 - hp.beta1) * g[k];
          vvp[k] = hp.beta2 * vvp[k] + (1.0 - hp.beta2) * g[k] * g[k];
          const double mhat = mm[k] / bc1;
          const double vhat = vvp[k] / bc2;
          p[k] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
        }
      }
    }
    EpochStats stats;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto trace = forward(params, inputs[i]);
      stats.loss += loss(trace, train_set[i].label);
      hit += trace.predicted == train_set[i].label;
    }
    stats.loss /= static_cast<double>(inputs.size());
    stats.accuracy = static_cast<double>(hit) / static_cast<double>(inputs.size());
    if (!std::isfinite(stats.loss))
      throw TrainingDiverged("non-finite mean loss after epoch " + std::to_string(epoch));
    result.history.push_back(stats);
  }
  result.params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

constexpr char kMagic[8] = {'A', 'T', 'L', 'B', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  void f64(double v) { le<std::uint64_t>(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("corrupt checkpoint: truncated");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
  T le() {
    auto s = take(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(s[i])) << (8 * i);
    return static_cast<T>(u);
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str32() {
    const auto n = le<std::uint32_t>();
    return std::string(take(n));
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Parameters& params, const std::filesystem::path& path,
                     const nlohmann::ordered_json& metadata) {
  if (!params.all_finite()) throw CheckpointError("refusing to save non-finite weights");
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  nlohmann::ordered_json header;
  header["model"] = params.config.to_json();
  header["metadata"] = metadata;
  const std::string hs = header.dump();
  w.le<std::uint64_t>(hs.size());
  w.bytes(hs.data(), hs.size());
  std::uint32_t count = 0;
  for_each_tensor(params, [&](const std::string&, const auto&) { ++count; });
  w.le<std::uint32_t>(count);
  for_each_tensor(params, [&](const std::string& name, const auto& t) {
    w.str32(name);
    w.le<std::uint32_t>(2);
    w.le<std::uint64_t>(static_cast<std::uint64_t>(t.rows()));
    w.le<std::uint64_t>(static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) w.f64(t.data()[i]);
  });
  const std::uint64_t sum = fnv1a64(w.data());
  w.le<std::uint64_t>(sum);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw Error("failed writing " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(data);
  auto magic = r.take(sizeof kMagic);
  if (magic != std::string_view(kMagic, sizeof kMagic))
    throw CheckpointError("corrupt checkpoint: bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version mismatch: file has " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  if (data.size() < sizeof kMagic + 4 + 8)
    throw CheckpointError("corrupt checkpoint: truncated");
  {
    Reader tail(std::string_view(data).substr(data.size() - 8));
    const auto stored = tail.le<std::uint64_t>();
    if (stored != fnv1a64(std::string_view(data).substr(0, data.size() - 8)))
      throw CheckpointError("corrupt checkpoint: checksum mismatch (truncated or modified)");
  }
  const auto hlen = r.le<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.take(static_cast<std::size_t>(hlen)));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  LoadedCheckpoint out;
  out.params = init_model(ModelConfig::from_json(header.at("model")));
  out.metadata = header.value("metadata", nlohmann::json::object());
  std::uint32_t expected = 0;
  for_each_tensor(out.params, [&](const std::string&, const auto&) { ++expected; });
  if (r.le<std::uint32_t>() != expected) throw CheckpointError("corrupt checkpoint: tensor count");
  for_each_tensor(out.params, [&](const std::string& name, auto& t) {
    if (r.str32() != name) throw CheckpointError("corrupt checkpoint: expected tensor " + name);
    if (r.le<std::uint32_t>() != 2) throw CheckpointError("corrupt checkpoint: rank of " + name);
    const auto rows = r.le<std::uint64_t>();
    const auto cols = r.le<std::uint64_t>();
    if (rows != static_cast<std::uint64_t>(t.rows()) || cols != static_cast<std::uint64_t>(t.cols()))
      throw CheckpointError("corrupt checkpoint: shape of " + name);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = r.f64();
  });
  if (r.pos() != data.size() - 8) throw CheckpointError("corrupt checkpoint: trailing bytes");
  if (!out.params.all_finite()) throw CheckpointError("corrupt checkpoint: non-finite weights");
  return out;
}

}  // namespace attrlab
