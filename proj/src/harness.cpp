#include "fairrank/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "fairrank/report.hpp"

namespace fairrank {

namespace fs = std::filesystem;
using nlohmann::json;

std::string ToString(RerankerKind kind) { return kind == RerankerKind::kFmmr ? "fmmr" : "detconstsort"; }

RerankerKind RerankerFromString(const std::string& s) {
  if (s == "fmmr") return RerankerKind::kFmmr;
  if (s == "detconstsort") return RerankerKind::kDetConstSort;
  throw ConfigError("unknown reranker '" + s + "' (expected fmmr or detconstsort)");
}

std::string ToString(LabelMode mode) { return mode == LabelMode::kGroundTruth ? "ground-truth" : "inferred"; }

LabelMode LabelModeFromString(const std::string& s) {
  if (s == "ground-truth") return LabelMode::kGroundTruth;
  if (s == "inferred") return LabelMode::kInferred;
  throw ConfigError("unknown label_mode '" + s + "' (expected ground-truth or inferred)");
}

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::Default() {
  ExperimentConfig cfg;
  for (const char* q : {"tennis", "pizza", "table"}) cfg.queries.push_back(BundledProfile(q));
  cfg.population = BundledProfile("population");
  cfg.rerankers = {RerankerKind::kFmmr};
  cfg.embedding_variants = {'A', 'B', 'C'};
  cfg.classifier_variants = {"ff-sim", "df-sim"};
  const auto& g = cfg.population.groups;
  for (const char* o : {"dark_man->light_man", "light_man->dark_man", "any->light_man", "light_man->any"}) {
    cfg.objectives.push_back(AttackObjective::Parse(o, g));
  }
  cfg.pr_values = {0.2, 0.5, 0.7, 1.0};
  for (int k = 10; k <= 50; k += 5) cfg.k_values.push_back(k);
  cfg.seeds = {0};
  return cfg;
}

int ExperimentConfig::max_k() const {
  return k_values.empty() ? 0 : *std::max_element(k_values.begin(), k_values.end());
}

std::size_t ExperimentConfig::CellCount() const {
  std::size_t per_reranker = 0;
  for (auto r : rerankers) per_reranker += r == RerankerKind::kFmmr ? embedding_variants.size() : 1;
  return queries.size() * per_reranker * classifier_variants.size() * objectives.size() * pr_values.size() *
         k_values.size() * seeds.size();
}

void ExperimentConfig::Validate() const {
  if (queries.empty()) throw ConfigError("config: queries must be nonempty");
  if (rerankers.empty()) throw ConfigError("config: rerankers must be nonempty");
  if (classifier_variants.empty()) throw ConfigError("config: classifiers must be nonempty");
  if (objectives.empty()) throw ConfigError("config: objectives must be nonempty");
  if (pr_values.empty()) throw ConfigError("config: pr_values must be nonempty");
  if (k_values.empty()) throw ConfigError("config: k_values must be nonempty");
  if (seeds.empty()) throw ConfigError("config: seeds must be nonempty");
  const bool uses_fmmr = std::find(rerankers.begin(), rerankers.end(), RerankerKind::kFmmr) != rerankers.end();
  if (uses_fmmr && embedding_variants.empty()) throw ConfigError("config: embeddings must be nonempty for fmmr");
  for (char e : embedding_variants) {
    if (e != 'A' && e != 'B' && e != 'C') throw ConfigError(std::string("config: unknown embedding '") + e + "'");
  }
  for (const auto& c : classifier_variants) {
    if (c != "ff-sim" && c != "df-sim") throw ConfigError("config: unknown classifier '" + c + "'");
  }
  population.Validate();
  const int G = population.groups.size();
  for (const auto& q : queries) {
    q.Validate();
    if (!(q.groups == population.groups)) {
      throw ConfigError("config: query '" + q.name + "' uses a different group schema from the population");
    }
    if (q.feature_dim() != population.feature_dim()) {
      throw ConfigError("config: query '" + q.name + "' has a different feature dimension from the population");
    }
  }
  for (const auto& o : objectives) o.Validate(G);
  for (double pr : pr_values) {
    if (!(pr >= 0.0 && pr <= 1.0)) throw ConfigError("config: pr values must lie in [0, 1]");
  }
  int min_list = std::numeric_limits<int>::max();
  for (const auto& q : queries) min_list = std::min(min_list, q.list_size);
  for (int k : k_values) {
    if (k < 1) throw ConfigError("config: k values must be positive");
    if (k > min_list) {
      throw ConfigError("config: k=" + std::to_string(k) + " exceeds the smallest list size " +
                        std::to_string(min_list));
    }
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("config: epsilon must be >= 0");
  if (!(attention_p > 0.0 && attention_p < 1.0)) throw ConfigError("config: attention_p must lie in (0, 1)");
  if (!(fmmr_lambda >= 0.0 && fmmr_lambda <= 1.0)) throw ConfigError("config: fmmr lambda must lie in [0, 1]");
  if (advantaged_group.value < 0 || advantaged_group.value >= G) {
    throw ConfigError("config: advantaged group outside schema");
  }
  classifier_train.Validate();
  generator_train.Validate();
}

namespace {

const std::set<std::string> kConfigKeys = {
    "queries",          "rerankers",        "embeddings",      "classifiers", "objectives",
    "pr_values",        "k_values",         "seeds",           "label_mode",  "master_seed",
    "epsilon",          "attention_p",      "fmmr",            "selection",   "advantaged_group",
    "population",       "classifier_train", "generator_train", "description"};

QueryProfile QueryFromJson(const json& j, const fs::path& base_dir) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s.ends_with(".json")) {
      const fs::path p = fs::path(s).is_absolute() ? fs::path(s) : base_dir / s;
      std::ifstream in(p);
      if (!in) throw ConfigError("cannot open query profile '" + p.string() + "'");
      try {
        return ProfileFromJson(json::parse(in));
      } catch (const json::parse_error& e) {
        throw ConfigError("query profile '" + p.string() + "' is not valid JSON: " + e.what());
      }
    }
    return BundledProfile(s);
  }
  return ProfileFromJson(j);
}

json QueryRefToJson(const QueryProfile& p) {
  for (const auto& name : BundledProfileNames()) {
    if (p.name != name) continue;
    const auto bundled = BundledProfile(name);
    if (ProfileToJson(bundled) == ProfileToJson(p)) return name;
  }
  return ProfileToJson(p);
}

void CheckKeys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

ExperimentConfig ConfigFromJsonImpl(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  CheckKeys(j, kConfigKeys, "config");
  ExperimentConfig cfg = ExperimentConfig::Default();
  if (j.contains("population")) cfg.population = QueryFromJson(j.at("population"), base_dir);
  const auto& groups = cfg.population.groups;
  if (j.contains("queries")) {
    cfg.queries.clear();
    for (const auto& q : j.at("queries")) cfg.queries.push_back(QueryFromJson(q, base_dir));
  }
  if (j.contains("rerankers")) {
    cfg.rerankers.clear();
    for (const auto& r : j.at("rerankers")) cfg.rerankers.push_back(RerankerFromString(r.get<std::string>()));
  }
  if (j.contains("embeddings")) {
    cfg.embedding_variants.clear();
    for (const auto& e : j.at("embeddings")) {
      const auto s = e.get<std::string>();
      if (s.size() != 1) throw ConfigError("config: embedding variants are single letters, got '" + s + "'");
      cfg.embedding_variants.push_back(s[0]);
    }
  }
  if (j.contains("classifiers")) cfg.classifier_variants = j.at("classifiers").get<std::vector<std::string>>();
  if (j.contains("objectives")) {
    cfg.objectives.clear();
    for (const auto& o : j.at("objectives")) cfg.objectives.push_back(AttackObjective::Parse(o, groups));
  }
  if (j.contains("pr_values")) cfg.pr_values = j.at("pr_values").get<Vector>();
  if (j.contains("k_values")) cfg.k_values = j.at("k_values").get<std::vector<int>>();
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    if (s.is_number_unsigned()) {
      cfg.seeds.clear();
      for (std::uint64_t i = 0; i < s.get<std::uint64_t>(); ++i) cfg.seeds.push_back(i);
    } else {
      cfg.seeds = s.get<std::vector<std::uint64_t>>();
    }
  }
  if (j.contains("label_mode")) cfg.label_mode = LabelModeFromString(j.at("label_mode").get<std::string>());
  cfg.master_seed = j.value("master_seed", cfg.master_seed);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.attention_p = j.value("attention_p", cfg.attention_p);
  if (j.contains("fmmr")) {
    const auto& f = j.at("fmmr");
    CheckKeys(f, {"lambda", "diversity"}, "config.fmmr");
    cfg.fmmr_lambda = f.value("lambda", cfg.fmmr_lambda);
    const auto d = f.value("diversity", std::string("item"));
    if (d == "item") {
      cfg.fmmr_diversity = FmmrDiversity::kMaxItemSimilarity;
    } else if (d == "centroid") {
      cfg.fmmr_diversity = FmmrDiversity::kCentroidSimilarity;
    } else {
      throw ConfigError("config.fmmr: unknown diversity '" + d + "' (expected item or centroid)");
    }
  }
  if (j.contains("selection")) {
    const auto s = j.at("selection").get<std::string>();
    if (s == "bernoulli") {
      cfg.selection = SelectionMode::kBernoulli;
    } else if (s == "exact-count") {
      cfg.selection = SelectionMode::kExactCount;
    } else {
      throw ConfigError("config: unknown selection '" + s + "' (expected bernoulli or exact-count)");
    }
  }
  if (j.contains("advantaged_group")) cfg.advantaged_group = groups.find(j.at("advantaged_group").get<std::string>());
  if (j.contains("classifier_train")) {
    const auto& t = j.at("classifier_train");
    CheckKeys(t, {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay"}, "config.classifier_train");
    auto& c = cfg.classifier_train;
    c.epochs = t.value("epochs", c.epochs);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.learning_rate = t.value("learning_rate", c.learning_rate);
    c.momentum = t.value("momentum", c.momentum);
    c.weight_decay = t.value("weight_decay", c.weight_decay);
  }
  if (j.contains("generator_train")) {
    const auto& t = j.at("generator_train");
    CheckKeys(t, {"epochs", "batch_size", "learning_rate", "momentum", "retain_weight", "hidden_width"},
              "config.generator_train");
    auto& c = cfg.generator_train;
    c.epochs = t.value("epochs", c.epochs);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.learning_rate = t.value("learning_rate", c.learning_rate);
    c.momentum = t.value("momentum", c.momentum);
    c.retain_weight = t.value("retain_weight", c.retain_weight);
    c.hidden_width = t.value("hidden_width", c.hidden_width);
  }
  cfg.Validate();
  return cfg;
}

}  // namespace

ExperimentConfig ExperimentConfigFromJson(const json& j) {
  try {
    return ConfigFromJsonImpl(j, fs::current_path());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig LoadExperimentConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    const json j = json::parse(in);
    return ConfigFromJsonImpl(j, path.parent_path());
  } catch (const json::exception& e) {
    throw ConfigError("malformed config '" + path.string() + "': " + e.what());
  }
}

json ExperimentConfigToJson(const ExperimentConfig& cfg) {
  const auto& groups = cfg.groups();
  json j;
  j["queries"] = json::array();
  for (const auto& q : cfg.queries) j["queries"].push_back(QueryRefToJson(q));
  j["population"] = QueryRefToJson(cfg.population);
  j["rerankers"] = json::array();
  for (auto r : cfg.rerankers) j["rerankers"].push_back(ToString(r));
  j["embeddings"] = json::array();
  for (char e : cfg.embedding_variants) j["embeddings"].push_back(std::string(1, e));
  j["classifiers"] = cfg.classifier_variants;
  j["objectives"] = json::array();
  for (const auto& o : cfg.objectives) j["objectives"].push_back(o.Name(groups));
  j["pr_values"] = cfg.pr_values;
  j["k_values"] = cfg.k_values;
  j["seeds"] = cfg.seeds;
  j["label_mode"] = ToString(cfg.label_mode);
  j["master_seed"] = cfg.master_seed;
  j["epsilon"] = cfg.epsilon;
  j["attention_p"] = cfg.attention_p;
  j["fmmr"] = {{"lambda", cfg.fmmr_lambda},
               {"diversity", cfg.fmmr_diversity == FmmrDiversity::kMaxItemSimilarity ? "item" : "centroid"}};
  j["selection"] = cfg.selection == SelectionMode::kBernoulli ? "bernoulli" : "exact-count";
  j["advantaged_group"] = groups.name(cfg.advantaged_group);
  const auto& c = cfg.classifier_train;
  j["classifier_train"] = {
      {"epochs", c.epochs},     {"batch_size", c.batch_size},        {"learning_rate", c.learning_rate},
      {"momentum", c.momentum}, {"weight_decay", c.weight_decay}};
  const auto& g = cfg.generator_train;
  j["generator_train"] = {{"epochs", g.epochs},
                          {"batch_size", g.batch_size},
                          {"learning_rate", g.learning_rate},
                          {"momentum", g.momentum},
                          {"retain_weight", g.retain_weight},
                          {"hidden_width", g.hidden_width}};
  return j;
}

// ---------------------------------------------------------------------------
// Seeds

std::uint64_t ClassifierDataSeed(std::uint64_t master, std::uint64_t seed) {
  return DeriveSeed(master, "classifier-data", {seed});
}

std::uint64_t GeneratorDataSeed(std::uint64_t master, std::uint64_t seed) {
  return DeriveSeed(master, "generator-data", {seed});
}

std::uint64_t QueryCorpusSeed(std::uint64_t master, std::uint64_t seed, const std::string& query) {
  return DeriveSeed(master, "query-corpus", {seed, HashString(query)});
}

std::uint64_t AttackSeed(std::uint64_t master, std::uint64_t seed, const std::string& query,
                         const std::string& classifier, const std::string& objective, double pr) {
  return DeriveSeed(master, "attack-application",
                    {seed, HashString(query), HashString(classifier), HashString(objective),
                     std::bit_cast<std::uint64_t>(pr)});
}

// ---------------------------------------------------------------------------
// Models

namespace {

std::string HexKey(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(HashString(j.dump())));
  return buf;
}

std::optional<json> ReadCache(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;  // torn or foreign file: retrain and overwrite
  }
}

void WriteCache(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp);
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("cannot write cache file " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

ModelStore::ModelStore(const ExperimentConfig& cfg, fs::path cache_dir) : cfg_(cfg), cache_dir_(std::move(cache_dir)) {
  for (char e : {'A', 'B', 'C'}) {
    embeddings_[e] = std::make_unique<EmbeddingModel>(e, cfg.population.feature_dim());
  }
}

template <typename T>
ModelStore::Slot<T>& ModelStore::SlotFor(std::map<std::string, std::unique_ptr<Slot<T>>>& table,
                                         const std::string& key) {
  std::lock_guard lock(mu_);
  auto& slot = table[key];
  if (!slot) slot = std::make_unique<Slot<T>>();
  return *slot;
}

const Classifier& ModelStore::GetClassifier(std::uint64_t seed, const std::string& variant) {
  const std::uint64_t data_seed = ClassifierDataSeed(cfg_.master_seed, seed);
  TrainConfig tc = cfg_.classifier_train;
  tc.seed = DeriveSeed(cfg_.master_seed, "classifier-train", {seed, HashString(variant)});
  const json key_json = {{"kind", "classifier"},
                         {"population", ProfileToJson(cfg_.population)},
                         {"data_seed", data_seed},
                         {"variant", variant},
                         {"train",
                          {tc.epochs, tc.batch_size, tc.learning_rate, tc.momentum, tc.weight_decay, tc.seed}}};
  const std::string key = "classifier-" + HexKey(key_json);
  auto& slot = SlotFor(classifiers_, key);
  std::call_once(slot.once, [&] {
    const fs::path path = cache_dir_.empty() ? fs::path() : cache_dir_ / (key + ".json");
    if (!path.empty()) {
      if (auto j = ReadCache(path)) {
        slot.value = std::make_unique<Classifier>(ClassifierFromJson(*j));
        return;
      }
    }
    const Corpus data = GenerateCorpus(cfg_.population, data_seed);
    auto trained = TrainClassifierVariant(data, tc, variant);
    if (!path.empty()) WriteCache(path, ClassifierToJson(trained.classifier));
    slot.value = std::make_unique<Classifier>(std::move(trained.classifier));
  });
  return *slot.value;
}

const PerturbationGenerator& ModelStore::GetGenerator(std::uint64_t seed, const std::string& classifier,
                                                      const AttackObjective& objective) {
  const auto& groups = cfg_.groups();
  const std::string obj_name = objective.Name(groups);
  const std::uint64_t data_seed = GeneratorDataSeed(cfg_.master_seed, seed);
  GeneratorTrainConfig gc = cfg_.generator_train;
  gc.seed = DeriveSeed(cfg_.master_seed, "generator-train", {seed, HashString(classifier), HashString(obj_name)});
  const json key_json = {{"kind", "generator"},
                         {"population", ProfileToJson(cfg_.population)},
                         {"classifier_data_seed", ClassifierDataSeed(cfg_.master_seed, seed)},
                         {"classifier_train",
                          {cfg_.classifier_train.epochs, cfg_.classifier_train.batch_size,
                           cfg_.classifier_train.learning_rate, cfg_.classifier_train.momentum,
                           cfg_.classifier_train.weight_decay}},
                         {"master_seed", cfg_.master_seed},
                         {"seed", seed},
                         {"classifier", classifier},
                         {"objective", obj_name},
                         {"epsilon", cfg_.epsilon},
                         {"data_seed", data_seed},
                         {"train",
                          {gc.epochs, gc.batch_size, gc.learning_rate, gc.momentum, gc.retain_weight,
                           gc.hidden_width, gc.seed}}};
  const std::string key = "generator-" + HexKey(key_json);
  auto& slot = SlotFor(generators_, key);
  std::call_once(slot.once, [&] {
    const fs::path path = cache_dir_.empty() ? fs::path() : cache_dir_ / (key + ".json");
    if (!path.empty()) {
      if (auto j = ReadCache(path)) {
        slot.value = std::make_unique<PerturbationGenerator>(GeneratorFromJson(*j, groups));
        return;
      }
    }
    const Classifier& clf = GetClassifier(seed, classifier);
    const Corpus data = GenerateCorpus(cfg_.population, data_seed);
    const auto [train, eval] = SplitTrainEval(data, kGeneratorSplitRatio, DeriveSeed(data_seed, "split"));
    auto trained = TrainCgap(clf, train, objective, cfg_.epsilon, gc);
    if (!path.empty()) WriteCache(path, GeneratorToJson(trained.generator, groups));
    slot.value = std::make_unique<PerturbationGenerator>(std::move(trained.generator));
  });
  return *slot.value;
}

const EmbeddingModel& ModelStore::GetEmbedding(char variant) const {
  const auto it = embeddings_.find(variant);
  if (it == embeddings_.end()) throw ConfigError(std::string("unknown embedding '") + variant + "'");
  return *it->second;
}

const Corpus& ModelStore::GetQueryCorpus(std::uint64_t seed, const QueryProfile& query) {
  const std::uint64_t s = QueryCorpusSeed(cfg_.master_seed, seed, query.name);
  const std::string key = query.name + "/" + std::to_string(s) + "/" + HexKey(ProfileToJson(query));
  auto& slot = SlotFor(corpora_, key);
  std::call_once(slot.once, [&] { slot.value = std::make_unique<Corpus>(GenerateCorpus(query, s)); });
  return *slot.value;
}

const RankedList& ModelStore::GetOracle(std::uint64_t seed, const QueryProfile& query, RerankerKind reranker,
                                        std::optional<char> embedding) {
  const std::string key = query.name + "/" + std::to_string(seed) + "/" + ToString(reranker) + "/" +
                          (embedding ? std::string(1, *embedding) : std::string("-")) + "/" +
                          HexKey(ProfileToJson(query));
  auto& slot = SlotFor(oracles_, key);
  std::call_once(slot.once, [&] {
    const Corpus& corpus = GetQueryCorpus(seed, query);
    const EmbeddingModel* emb = embedding ? &GetEmbedding(*embedding) : nullptr;
    slot.value = std::make_unique<RankedList>(
        Rerank(RankByUtility(corpus.items), corpus, reranker, emb, TrueLabels(corpus), cfg_));
  });
  return *slot.value;
}

// ---------------------------------------------------------------------------
// Cells

LabelMap TrueLabels(const Corpus& corpus) {
  LabelMap m;
  for (const auto& it : corpus.items) m.emplace(it.id, it.group);
  return m;
}

LabelMap InferLabels(const Classifier& clf, const Corpus& corpus) {
  LabelMap m;
  for (const auto& it : corpus.items) m.emplace(it.id, clf.Predict(it.features));
  return m;
}

RankedList Rerank(const RankedList& baseline, const Corpus& corpus, RerankerKind reranker,
                  const EmbeddingModel* embedding, const LabelMap& labels, const ExperimentConfig& cfg) {
  if (reranker == RerankerKind::kFmmr) {
    if (embedding == nullptr) throw InternalError("fmmr rerank without an embedding model");
    FmmrParams p;
    p.lambda = cfg.fmmr_lambda;
    p.k_out = cfg.max_k();
    p.diversity = cfg.fmmr_diversity;
    return FmmrRerank(baseline, corpus.items, *embedding, p);
  }
  return DetConstSort(baseline, labels, corpus.groups().size(), cfg.max_k());
}

std::string FormatNumber(double v) {
  if (v == 0.0) v = 0.0;  // no "-0"
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> CsvHeader(const GroupSchema& groups) {
  std::vector<std::string> h = {"query", "reranker", "embedding", "classifier", "objective", "pr", "k", "seed"};
  for (const auto& g : groups.names()) h.push_back("skew_" + g);
  for (const auto& g : groups.names()) h.push_back("attn_" + g);
  for (const char* c : {"ndcg_oracle", "ndcg_attacked", "eta_skew", "eta_attention", "delta_ndcg_pct", "flags"}) {
    h.emplace_back(c);
  }
  return h;
}

std::string CsvRow(const CellResult& r) {
  auto opt = [](const std::optional<double>& v) { return v ? FormatNumber(*v) : std::string(); };
  std::ostringstream os;
  os << r.query << ',' << ToString(r.reranker) << ',' << (r.embedding ? std::string(1, *r.embedding) : "none") << ','
     << r.classifier << ',' << r.objective << ',' << FormatNumber(r.pr) << ',' << r.k << ',' << r.seed;
  for (const auto& s : r.attacked.skew_at_k) os << ',' << (r.failed ? "" : opt(s));
  for (double a : r.attacked.avg_attention) os << ',' << (r.failed ? "" : FormatNumber(a));
  if (r.failed) {
    os << ",,";
  } else {
    os << ',' << FormatNumber(r.oracle.ndcg) << ',' << FormatNumber(r.attacked.ndcg);
  }
  os << ',' << opt(r.eta_skew) << ',' << opt(r.eta_attention) << ',' << opt(r.delta_ndcg_pct) << ',';
  for (std::size_t i = 0; i < r.flags.size(); ++i) os << (i ? ";" : "") << r.flags[i];
  return os.str();
}

namespace {

std::string SanitizeFlag(std::string s) {
  for (auto& c : s) {
    if (c == ',' || c == ';' || c == '\n' || c == '\r' || c == '"') c = ' ';
  }
  return s;
}

struct CellTask {
  std::size_t query, reranker, embedding, classifier, objective, pr, seed;
  std::optional<char> embedding_variant;
};

std::vector<GroupId> GroupsOf(const RankedList& list, const Corpus& corpus) {
  std::map<ItemId, GroupId> truth;
  for (const auto& it : corpus.items) truth.emplace(it.id, it.group);
  std::vector<GroupId> out;
  out.reserve(list.size());
  for (const auto& e : list.entries) out.push_back(truth.at(e.id));
  return out;
}

std::vector<CellResult> EvaluateTask(const ExperimentConfig& cfg, ModelStore& store, const CellTask& t) {
  const auto& groups = cfg.groups();
  const auto& query = cfg.queries[t.query];
  const auto reranker = cfg.rerankers[t.reranker];
  const auto& clf_name = cfg.classifier_variants[t.classifier];
  const auto& objective = cfg.objectives[t.objective];
  const std::string obj_name = objective.Name(groups);
  const double pr = cfg.pr_values[t.pr];
  const std::uint64_t seed = cfg.seeds[t.seed];

  auto base_row = [&](int k) {
    CellResult r;
    r.query = query.name;
    r.reranker = reranker;
    r.embedding = t.embedding_variant;
    r.classifier = clf_name;
    r.objective = obj_name;
    r.pr = pr;
    r.k = k;
    r.seed = seed;
    return r;
  };

  std::vector<CellResult> rows;
  try {
    const Corpus& corpus = store.GetQueryCorpus(seed, query);
    const RankedList& oracle = store.GetOracle(seed, query, reranker, t.embedding_variant);
    const Classifier& clf = store.GetClassifier(seed, clf_name);
    const PerturbationGenerator& gen = store.GetGenerator(seed, clf_name, objective);
    const auto [attacked_corpus, application] =
        ApplyAttack(corpus, gen, pr, AttackSeed(cfg.master_seed, seed, query.name, clf_name, obj_name, pr),
                    cfg.selection);
    const LabelMap labels = cfg.label_mode == LabelMode::kInferred ? InferLabels(clf, attacked_corpus)
                                                                   : TrueLabels(attacked_corpus);
    const EmbeddingModel* emb = t.embedding_variant ? &store.GetEmbedding(*t.embedding_variant) : nullptr;
    const RankedList attacked =
        Rerank(RankByUtility(attacked_corpus.items), attacked_corpus, reranker, emb, labels, cfg);

    std::vector<std::string> list_flags;
    auto note_diagnostics = [&](const RankedList& l, const char* prefix) {
      if (std::any_of(l.diagnostics.begin(), l.diagnostics.end(),
                      [](const std::string& d) { return d.starts_with("zero_norm_embedding"); })) {
        list_flags.push_back(std::string(prefix) + "zero_norm_embedding");
      }
    };
    note_diagnostics(oracle, "oracle_");
    note_diagnostics(attacked, "attacked_");

    const Vector population = GroupProportions(corpus);
    const auto oracle_groups = GroupsOf(oracle, corpus);
    const auto attacked_groups = GroupsOf(attacked, corpus);
    const Vector oracle_u = oracle.utilities();
    const Vector attacked_u = attacked.utilities();

    for (int k : cfg.k_values) {
      CellResult r = base_row(k);
      r.flags = list_flags;
      r.oracle = ComputeReport(oracle_groups, oracle_u, population, k, cfg.attention_p);
      r.attacked = ComputeReport(attacked_groups, attacked_u, population, k, cfg.attention_p);
      for (int g = 0; g < groups.size(); ++g) {
        if (r.attacked.attention_absent[static_cast<std::size_t>(g)]) {
          r.flags.push_back("absent:" + groups.name(GroupId{g}));
        }
      }
      const EffectivenessInput in{r.oracle, r.attacked, cfg.advantaged_group};
      auto eta = [&](MetricSelector m, const char* tag) -> std::optional<double> {
        try {
          const auto e = AttackEffectiveness(in, m);
          for (auto g : e.excluded) r.flags.push_back(std::string(tag) + "_excluded:" + groups.name(g));
          return e.eta;
        } catch (const UndefinedMetricError&) {
          r.flags.push_back(std::string("eta_") + tag + "_undefined");
          return std::nullopt;
        }
      };
      r.eta_skew = eta(MetricSelector::kSkew, "skew");
      r.eta_attention = eta(MetricSelector::kAttention, "attn");
      if (r.oracle.ndcg > 0.0) {
        r.delta_ndcg_pct = PercentChange(r.oracle.ndcg, r.attacked.ndcg);
      } else {
        r.flags.push_back("delta_ndcg_undefined");
      }
      rows.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    rows.clear();
    for (int k : cfg.k_values) {
      CellResult r = base_row(k);
      r.failed = true;
      r.oracle.skew_at_k.assign(static_cast<std::size_t>(groups.size()), std::nullopt);
      r.oracle.avg_attention.assign(static_cast<std::size_t>(groups.size()), 0.0);
      r.attacked = r.oracle;
      r.flags = {"failed:" + SanitizeFlag(e.what())};
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

void ParallelFor(std::size_t n, int jobs, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

RunSummary RunGrid(const ExperimentConfig& cfg, int jobs, const fs::path& cache_dir) {
  cfg.Validate();
  ModelStore store(cfg, cache_dir);

  std::vector<CellTask> tasks;
  for (std::size_t q = 0; q < cfg.queries.size(); ++q) {
    for (std::size_t r = 0; r < cfg.rerankers.size(); ++r) {
      std::vector<std::optional<char>> embeddings;
      if (cfg.rerankers[r] == RerankerKind::kFmmr) {
        for (char e : cfg.embedding_variants) embeddings.emplace_back(e);
      } else {
        embeddings.emplace_back(std::nullopt);
      }
      for (std::size_t e = 0; e < embeddings.size(); ++e) {
        for (std::size_t c = 0; c < cfg.classifier_variants.size(); ++c) {
          for (std::size_t o = 0; o < cfg.objectives.size(); ++o) {
            for (std::size_t p = 0; p < cfg.pr_values.size(); ++p) {
              for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
                tasks.push_back({q, r, e, c, o, p, s, embeddings[e]});
              }
            }
          }
        }
      }
    }
  }

  std::vector<std::vector<CellResult>> results(tasks.size());
  ParallelFor(tasks.size(), jobs, [&](std::size_t i) { results[i] = EvaluateTask(cfg, store, tasks[i]); });

  // Tasks are ordered by every coordinate but k, with seed innermost; rows
  // are emitted with k ahead of seed to follow the column order.
  RunSummary summary;
  summary.rows.reserve(cfg.CellCount());
  const std::size_t S = cfg.seeds.size();
  for (std::size_t block = 0; block < tasks.size(); block += S) {
    for (std::size_t ki = 0; ki < cfg.k_values.size(); ++ki) {
      for (std::size_t s = 0; s < S; ++s) summary.rows.push_back(std::move(results[block + s][ki]));
    }
  }
  for (const auto& r : summary.rows) summary.failed_cells += r.failed ? 1 : 0;
  return summary;
}

void WriteResultsCsv(const fs::path& path, const GroupSchema& groups, const std::vector<CellResult>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto header = CsvHeader(groups);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : rows) out << CsvRow(r) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

RunSummary RunExperiment(const ExperimentConfig& cfg, const fs::path& out_dir, int jobs) {
  fs::create_directories(out_dir);
  RunSummary summary = RunGrid(cfg, jobs, out_dir / "cache");
  const fs::path csv = out_dir / "results.csv";
  WriteResultsCsv(csv, cfg.groups(), summary.rows);

  json manifest;
  manifest["csv_schema_version"] = kCsvSchemaVersion;
  manifest["columns"] = CsvHeader(cfg.groups());
  manifest["rows"] = summary.rows.size();
  manifest["failed_cells"] = summary.failed_cells;
  manifest["config"] = ExperimentConfigToJson(cfg);
  std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << '\n';

  WriteSummary(ReadResultsCsv(csv), out_dir / "summary");
  return summary;
}

}  // namespace fairrank
