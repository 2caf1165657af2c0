#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fairrank/attack.hpp"
#include "fairrank/corpus.hpp"
#include "fairrank/inference.hpp"
#include "fairrank/metrics.hpp"
#include "fairrank/rerank.hpp"
#include "json.hpp"

namespace fairrank {

enum class RerankerKind { kFmmr, kDetConstSort };
std::string ToString(RerankerKind kind);
RerankerKind RerankerFromString(const std::string& s);

// Labels DetConstSort sees on the attacked corpus. The oracle list always
// uses true groups on the unperturbed corpus.
enum class LabelMode { kGroundTruth, kInferred };
std::string ToString(LabelMode mode);
LabelMode LabelModeFromString(const std::string& s);

// Feature-space perturbation bound used when a config does not set one.
inline constexpr double kDefaultEpsilon = 0.75;
inline constexpr double kGeneratorSplitRatio = 0.8;
inline constexpr int kCsvSchemaVersion = 1;

struct ExperimentConfig {
  std::vector<QueryProfile> queries;
  std::vector<RerankerKind> rerankers;
  std::vector<char> embedding_variants;
  std::vector<std::string> classifier_variants;
  std::vector<AttackObjective> objectives;
  Vector pr_values;
  std::vector<int> k_values;
  std::vector<std::uint64_t> seeds;
  LabelMode label_mode = LabelMode::kGroundTruth;

  std::uint64_t master_seed = 0;
  double epsilon = kDefaultEpsilon;
  double attention_p = kDefaultAttentionP;
  double fmmr_lambda = 0.14;
  FmmrDiversity fmmr_diversity = FmmrDiversity::kMaxItemSimilarity;
  SelectionMode selection = SelectionMode::kBernoulli;
  GroupId advantaged_group = GroupId{groups::kLightMan};
  QueryProfile population;  // source of classifier and generator training data
  TrainConfig classifier_train;
  GeneratorTrainConfig generator_train;

  // Table 1 grid over the bundled queries, one seed.
  static ExperimentConfig Default();

  const GroupSchema& groups() const { return population.groups; }
  int max_k() const;
  std::size_t CellCount() const;  // rows the grid produces
  void Validate() const;          // throws ConfigError
};

// Missing keys fall back to ExperimentConfig::Default().
ExperimentConfig ExperimentConfigFromJson(const nlohmann::json& j);
nlohmann::json ExperimentConfigToJson(const ExperimentConfig& cfg);
ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path);

// One CSV row.
struct CellResult {
  std::string query;
  RerankerKind reranker = RerankerKind::kFmmr;
  std::optional<char> embedding;  // FMMR only
  std::string classifier;
  std::string objective;
  double pr = 0.0;
  int k = 0;
  std::uint64_t seed = 0;

  MetricReport oracle;
  MetricReport attacked;
  std::optional<double> eta_skew;
  std::optional<double> eta_attention;
  std::optional<double> delta_ndcg_pct;
  std::vector<std::string> flags;
  bool failed = false;
};

std::vector<std::string> CsvHeader(const GroupSchema& groups);
std::string CsvRow(const CellResult& r);
std::string FormatNumber(double v);

// Trains and memoizes models and oracle lists. Models are also cached on
// disk under `cache_dir` (if non-empty), keyed by a hash of everything that
// determines them. Safe to call from several threads.
class ModelStore {
 public:
  ModelStore(const ExperimentConfig& cfg, std::filesystem::path cache_dir);

  const Classifier& GetClassifier(std::uint64_t seed, const std::string& variant);
  const PerturbationGenerator& GetGenerator(std::uint64_t seed, const std::string& classifier,
                                            const AttackObjective& objective);
  const EmbeddingModel& GetEmbedding(char variant) const;
  const Corpus& GetQueryCorpus(std::uint64_t seed, const QueryProfile& query);
  const RankedList& GetOracle(std::uint64_t seed, const QueryProfile& query, RerankerKind reranker,
                              std::optional<char> embedding);

 private:
  template <typename T>
  struct Slot {
    std::once_flag once;
    std::unique_ptr<T> value;
  };
  template <typename T>
  Slot<T>& SlotFor(std::map<std::string, std::unique_ptr<Slot<T>>>& table, const std::string& key);

  const ExperimentConfig& cfg_;
  std::filesystem::path cache_dir_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<Slot<Classifier>>> classifiers_;
  std::map<std::string, std::unique_ptr<Slot<PerturbationGenerator>>> generators_;
  std::map<std::string, std::unique_ptr<Slot<Corpus>>> corpora_;
  std::map<std::string, std::unique_ptr<Slot<RankedList>>> oracles_;
  std::map<char, std::unique_ptr<EmbeddingModel>> embeddings_;
};

// Seeds the harness derives from (master seed, coordinates).
std::uint64_t ClassifierDataSeed(std::uint64_t master, std::uint64_t seed);
std::uint64_t GeneratorDataSeed(std::uint64_t master, std::uint64_t seed);
std::uint64_t QueryCorpusSeed(std::uint64_t master, std::uint64_t seed, const std::string& query);
std::uint64_t AttackSeed(std::uint64_t master, std::uint64_t seed, const std::string& query,
                         const std::string& classifier, const std::string& objective, double pr);

RankedList Rerank(const RankedList& baseline, const Corpus& corpus, RerankerKind reranker,
                  const EmbeddingModel* embedding, const LabelMap& labels, const ExperimentConfig& cfg);

// Labels from the classifier's argmax on each item's (possibly perturbed)
// features.
LabelMap InferLabels(const Classifier& clf, const Corpus& corpus);
LabelMap TrueLabels(const Corpus& corpus);

struct RunSummary {
  std::vector<CellResult> rows;
  std::size_t failed_cells = 0;  // rows marked failed
};

// Evaluates the full grid. Rows come back in a fixed order independent of
// `jobs`. Cell failures are recorded in the row flags, never thrown.
RunSummary RunGrid(const ExperimentConfig& cfg, int jobs, const std::filesystem::path& cache_dir = {});

// RunGrid plus the artifacts: results.csv, manifest.json, summary tables.
RunSummary RunExperiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int jobs);

void WriteResultsCsv(const std::filesystem::path& path, const GroupSchema& groups,
                     const std::vector<CellResult>& rows);

}  // namespace fairrank
