// SPDX-License-Identifier: Apache-2.0
//
// Sufficiency and comprehensiveness tests: keep only, or remove, a selected
// set of MLP neurons and count how many test predictions survive.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrlab/alignment.hpp"

namespace attrlab {

enum class Selector { kNA, kIFNeuron, kGSNeuron, kRandom };
enum class TestKind { kSufficiency, kComprehensiveness };

std::string to_string(Selector s);
Selector parse_selector(const std::string& s);  // "na" | "if_neuron" | "gs_neuron" | "random"
std::string to_string(TestKind k);

/// Uniform sample of r distinct neurons, seeded by (seed, instance id).
std::vector<NeuronId> random_selection(std::uint64_t seed, const std::string& instance_id,
                                       std::size_t r, const ModelConfig& config);

/// The selector's top-r neurons for one test instance. Attribution-based
/// selectors ignore the seed.
std::vector<NeuronId> select_neurons(const AttributionContext& ctx, Selector selector,
                                     const Instance& inst, std::size_t r, std::uint64_t seed);

struct InstanceRecord {
  std::string id;
  int original = 0;
  int intervened = 0;
  std::size_t n_selected = 0;

  bool preserved() const { return original == intervened; }
};

struct FaithfulnessReport {
  TestKind test_kind = TestKind::kSufficiency;
  Selector selector = Selector::kNA;
  std::size_t r = 0;
  std::size_t requested_r = 0;  // differs from r when the protocol clamped it
  std::uint64_t seed = 0;
  double preserved_pct = 0.0;
  std::vector<InstanceRecord> records;

  std::size_t preserved_count() const;
  nlohmann::ordered_json to_json() const;
};

FaithfulnessReport run_test(const AttributionContext& ctx, const Dataset& test_set,
                            Selector selector, TestKind kind, std::size_t r, std::uint64_t seed);
FaithfulnessReport sufficiency(const AttributionContext& ctx, const Dataset& test_set,
                               Selector selector, std::size_t r = 1, std::uint64_t seed = 0);
FaithfulnessReport comprehensiveness(const AttributionContext& ctx, const Dataset& test_set,
                                     Selector selector, std::size_t r = 100,
                                     std::uint64_t seed = 0);

/// Percentage computed from per-instance records alone.
double preserved_pct_from_records(const std::vector<InstanceRecord>& records);

struct ProtocolOptions {
  std::size_t sufficiency_r = 1;
  std::size_t comprehensiveness_r = 100;
};

struct ProtocolRow {
  Selector selector;
  TestKind test_kind;
  std::size_t r;
  std::optional<std::uint64_t> seed;  // empty: mean over seeds
  double preserved_pct;
};

struct ProtocolResult {
  std::vector<FaithfulnessReport> reports;  // selector-major, then kind, then seed
  std::vector<ProtocolRow> rows;            // per-seed rows followed by the mean row
};

/// Both tests for every selector and seed. r is clamped to total - 1 so at
/// least one neuron stays outside the selection.
ProtocolResult run_protocol(const AttributionContext& ctx, const Dataset& test_set,
                            const std::vector<Selector>& selectors,
                            const std::vector<std::uint64_t>& seeds,
                            const ProtocolOptions& opts = {});

/// Aggregates reports into rows (per seed plus the mean).
std::vector<ProtocolRow> aggregate(const std::vector<FaithfulnessReport>& reports);

/// Columns: selector,test_kind,r,seed,preserved_pct (seed "mean" on mean rows).
void write_protocol_csv(const ProtocolResult& result, const std::filesystem::path& path,
                        const std::string& header_comment = {});
nlohmann::ordered_json protocol_to_json(const ProtocolResult& result);

}  // namespace attrlab
