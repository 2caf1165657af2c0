// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>

#include "fairrank/attack.hpp"
#include "fairrank/harness.hpp"
#include "fairrank/metrics.hpp"
#include "fairrank/rerank.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace fairrank;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

int g_failures = 0;

void Check(int id, double budget_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (s >= budget_s) {
    o.pass = false;
    o.detail += "; runtime over budget";
  }
  g_failures += o.pass ? 0 : 1;
  std::printf("%s criterion %d: %s [%.2f s, budget %.0f s]\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), s,
              budget_s);
  std::fflush(stdout);
}

int Jobs() { return static_cast<int>(std::max(2u, std::thread::hardware_concurrency())); }

std::vector<GroupId> ToGroups(const std::vector<int>& v) {
  std::vector<GroupId> out;
  for (int g : v) out.push_back(GroupId{g});
  return out;
}

// ---------------------------------------------------------------------------

Outcome MetricOracles() {
  int instances = 0, mismatches = 0;
  auto near = [&](double a, double b, double tol = 1e-9) {
    ++instances;
    if (!(std::abs(a - b) <= tol)) ++mismatches;
  };
  // Hand examples.
  near(SkewAtK(ToGroups({0, 1, 0, 0, 1, 1, 1}), Vector{0.4, 0.6}, GroupId{0}, 5), 1.5);
  near(AttentionAtRank(0.36, 1), 36.0);
  near(AttentionAtRank(0.36, 2), 23.04);
  near(Ndcg(Vector{1.0, 0.0}), 0.61315, 1e-5);
  near(Ndcg(Vector{1.0, 0.0}), 1.0 / (1.0 + 1.0 / std::log2(3.0)));
  {
    MetricReport o, a;
    o.avg_attention = {10, 10, 10};
    a.avg_attention = {11, 9.5, 10.2};
    o.skew_at_k = {1.0, 1.0, 1.0};
    a.skew_at_k = {1.0, 1.0, 1.0};
    near(AttackEffectiveness({o, a, GroupId{0}}, MetricSelector::kAttention).eta, 15.0);
    near(AttackEffectiveness({o, o, GroupId{0}}, MetricSelector::kAttention).eta, 0.0);
  }
  // Randomized small instances against the reference loops.
  Rng rng(20240601);
  for (int t = 0; t < 60; ++t) {
    const int n = 2 + static_cast<int>(rng.Below(11));
    const int G = 2 + static_cast<int>(rng.Below(3));
    std::vector<int> labels(static_cast<std::size_t>(n));
    Vector u(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<int>(rng.Below(static_cast<std::uint64_t>(G)));
    for (auto& x : u) x = rng.Uniform();
    Vector pop(static_cast<std::size_t>(G));
    for (auto& p : pop) p = 0.05 + rng.Uniform();
    const double total = std::accumulate(pop.begin(), pop.end(), 0.0);
    for (auto& p : pop) p /= total;
    const auto groups = ToGroups(labels);
    const int k = 1 + static_cast<int>(rng.Below(static_cast<std::uint64_t>(n)));
    for (int g = 0; g < G; ++g) {
      near(SkewAtK(groups, pop, GroupId{g}, k), oracle::Skew(labels, pop, g, k));
      const auto ref = oracle::AvgAttention(labels, g, 0.36, n);
      const auto got = AvgAttention(groups, GroupId{g}, 0.36);
      near(got.value, ref.first);
      if (got.absent != ref.second) ++mismatches;
    }
    near(Ndcg(u), oracle::Ndcg(u));
    MetricReport o, a;
    o.avg_attention.resize(static_cast<std::size_t>(G));
    a.avg_attention.resize(static_cast<std::size_t>(G));
    for (int g = 0; g < G; ++g) {
      o.avg_attention[static_cast<std::size_t>(g)] = 1.0 + 40.0 * rng.Uniform();
      a.avg_attention[static_cast<std::size_t>(g)] = 1.0 + 40.0 * rng.Uniform();
    }
    o.skew_at_k.assign(o.avg_attention.begin(), o.avg_attention.end());
    a.skew_at_k.assign(a.avg_attention.begin(), a.avg_attention.end());
    const GroupId target{static_cast<int>(rng.Below(static_cast<std::uint64_t>(G)))};
    near(AttackEffectiveness({o, a, target}, MetricSelector::kAttention).eta,
         oracle::Eta(o.avg_attention, a.avg_attention, target.value));
  }
  const bool ok = mismatches == 0 && instances >= 50;
  return {ok, std::to_string(instances) + " checks, " + std::to_string(mismatches) + " mismatches at 1e-9"};
}

Outcome DetConstSortFeasibility() {
  Rng rng(77);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = 2 + static_cast<int>(rng.Below(80));
    const int G = 1 + static_cast<int>(rng.Below(4));
    std::vector<Item> items;
    LabelMap labels;
    for (int i = 0; i < n; ++i) {
      items.push_back({static_cast<ItemId>(i), {}, {}, rng.Uniform()});
      labels[static_cast<ItemId>(i)] = GroupId{static_cast<int>(rng.Below(static_cast<std::uint64_t>(G)))};
    }
    const int k_out = 1 + static_cast<int>(rng.Below(static_cast<std::uint64_t>(n)));
    const auto out = DetConstSort(RankByUtility(items), labels, G, k_out);
    std::vector<int> ranked;
    for (const auto& e : out.entries) ranked.push_back(labels.at(e.id).value);
    violations += oracle::PrefixFloorsHold(ranked, G, k_out) && ranked.size() == items.size() ? 0 : 1;
  }
  // Twelve people, eight light above four dark.
  std::vector<Item> items;
  LabelMap truth;
  for (int i = 0; i < 12; ++i) {
    items.push_back({static_cast<ItemId>(i), {}, {}, 0.95 - 0.05 * i});
    truth[static_cast<ItemId>(i)] = GroupId{i < 8 ? 0 : 1};
  }
  LabelMap relabeled = truth;
  relabeled[8] = relabeled[9] = GroupId{0};
  auto dark_in_top6 = [&](const LabelMap& labels) {
    const auto out = DetConstSort(RankByUtility(items), labels, 2, 6);
    int n = 0;
    for (int i = 0; i < 6; ++i) n += labels.at(out.entries[static_cast<std::size_t>(i)].id).value == 1;
    return n;
  };
  const int truthful = dark_in_top6(truth);
  const int noisy = dark_in_top6(relabeled);
  const bool ok = violations == 0 && truthful == 2 && noisy == 1;
  return {ok, std::to_string(violations) + "/1000 infeasible; 12-item example: " + std::to_string(truthful) +
                  " dark in top 6 truthful, " + std::to_string(noisy) + " dark-labeled after relabeling"};
}

Outcome FmmrDegeneracies() {
  Rng rng(5);
  const EmbeddingModel emb('A', 8);
  auto random_items = [&](int n) {
    std::vector<Item> items;
    for (int i = 0; i < n; ++i) {
      Item it{static_cast<ItemId>(i), Vector(8), {}, rng.Uniform()};
      for (auto& f : it.features) f = rng.Normal();
      items.push_back(std::move(it));
    }
    return items;
  };
  int lambda_one = 0, identical = 0, greedy = 0;
  for (int t = 0; t < 50; ++t) {
    const auto items = random_items(30);
    const auto base = RankByUtility(items);
    lambda_one += FmmrRerank(base, items, emb, {1.0, 30}).ids() == base.ids() ? 0 : 1;
    auto same = items;
    for (auto& it : same) it.features = items[0].features;
    identical += FmmrRerank(base, same, emb, {rng.Uniform(), 30}).ids() == base.ids() ? 0 : 1;
  }
  for (int t = 0; t < 200; ++t) {
    const auto items = random_items(3);
    const double lambda = t == 0 ? 0.5 : rng.Uniform();
    Vector u;
    std::vector<std::vector<double>> e;
    for (const auto& it : items) {
      u.push_back(it.utility);
      e.push_back(emb.Embed(it.features));
    }
    const auto expected = oracle::GreedyMmr(u, e, lambda);
    const auto out = FmmrRerank(RankByUtility(items), items, emb, {lambda, 3});
    for (int i = 0; i < 3; ++i) {
      if (out.entries[static_cast<std::size_t>(i)].id != static_cast<ItemId>(expected[static_cast<std::size_t>(i)])) {
        ++greedy;
        break;
      }
    }
  }
  const bool ok = lambda_one == 0 && identical == 0 && greedy == 0;
  return {ok, "mismatches: lambda=1 " + std::to_string(lambda_one) + "/50, identical embeddings " +
                  std::to_string(identical) + "/50, 3-item greedy " + std::to_string(greedy) + "/200"};
}

double RelativeError(const Vector& a, const Vector& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

Outcome Gradients() {
  Rng rng(99);
  std::string detail;
  bool ok = true;
  for (const char* variant : {"df-sim", "ff-sim"}) {
    double worst = 0.0;
    for (int probe = 0; probe < 100; ++probe) {
      const auto clf = Classifier::ForVariant(variant, 32, 4, rng.NextU64());
      Vector x(32);
      for (auto& v : x) v = rng.Normal();
      const GroupId y{static_cast<int>(rng.Below(4))};
      const TargetSpec spec = probe % 2 ? TargetSpec::Toward(y) : TargetSpec::AwayFrom(y);
      const Vector fd = oracle::CentralDifference(
          [&](const std::vector<double>& z) { return clf.LossAndGradInput(z, spec).loss; }, x, 1e-4);
      worst = std::max(worst, RelativeError(clf.LossAndGradInput(x, spec).grad, fd));
    }
    ok = ok && worst < 1e-4;
    detail += std::string(detail.empty() ? "" : ", ") + variant + " max rel err " + Fmt("%.2e", worst);
  }
  return {ok, detail + " over 100 probes each"};
}

Outcome AttackEfficacy() {
  const ExperimentConfig cfg = ExperimentConfig::Default();
  ModelStore store(cfg, {});
  const auto objective = AttackObjective::Parse("dark_man->light_man", cfg.groups());
  const std::uint64_t seed = 0;
  const std::uint64_t data_seed = GeneratorDataSeed(cfg.master_seed, seed);
  const Corpus data = GenerateCorpus(cfg.population, data_seed);
  const Corpus heldout = SplitTrainEval(data, kGeneratorSplitRatio, DeriveSeed(data_seed, "split")).second;

  bool ok = true;
  std::string detail;
  for (const std::string variant : {"ff-sim", "df-sim"}) {
    const Classifier& clf = store.GetClassifier(seed, variant);
    const PerturbationGenerator& gen = store.GetGenerator(seed, variant, objective);
    const auto before = MisclassificationRate(clf, heldout, objective);
    const auto after = MisclassificationRate(clf, ApplyAttack(heldout, gen, 1.0, 1).first, objective);
    const double gain = 100.0 * (*after.targeted_success - *before.targeted_success);
    const double drop = 100.0 * (*before.other_accuracy - *after.other_accuracy);
    int n = 0, pgd = 0, amortized = 0;
    for (const auto& it : heldout.items) {
      if (it.group != groups::kDarkMan) continue;
      const Vector x = PgdPerturb(clf, it.features, TargetSpec::Toward(groups::kLightMan), cfg.epsilon, 20, 0.1);
      pgd += clf.Predict(x) == groups::kLightMan;
      amortized += clf.Predict(gen.Apply(it.features)) == groups::kLightMan;
      if (++n == 100) break;
    }
    const double pgd_rate = 100.0 * pgd / n, gen_rate = 100.0 * amortized / n;
    ok = ok && gain >= 40.0 && drop <= 5.0 && pgd_rate >= gen_rate - 10.0;
    detail += (detail.empty() ? "" : "; ") + variant + ": success " + Fmt("%.1f", 100.0 * *before.targeted_success) +
              "->" + Fmt("%.1f", 100.0 * *after.targeted_success) + " (+" + Fmt("%.1f", gain) +
              " pts), other-group drop " + Fmt("%.1f", drop) + " pts, PGD " + Fmt("%.0f", pgd_rate) +
              "% vs generator " + Fmt("%.0f", gen_rate) + "% on " + std::to_string(n) + " items";
  }
  return {ok, detail};
}

// Mean of `metric` over rows passing `keep`, skipping undefined cells.
double Mean(const std::vector<CellResult>& rows, const std::function<bool(const CellResult&)>& keep,
            const std::function<std::optional<double>(const CellResult&)>& metric) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.failed || !keep(r)) continue;
    if (const auto v = metric(r)) {
      s += *v;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "fairrank_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path cache = work / "cache";

  Check(1, 1, MetricOracles);
  Check(2, 5, DetConstSortFeasibility);
  Check(3, 1, FmmrDegeneracies);
  Check(4, 5, Gradients);
  Check(5, 60, AttackEfficacy);

  const ExperimentConfig fmmr_cfg = LoadExperimentConfig(fs::path(FAIRRANK_SOURCE_DIR) / "configs/fmmr_default.json");
  RunSummary fmmr;
  Check(6, 600, [&] {
    fmmr = RunGrid(fmmr_cfg, Jobs(), cache);
    std::string detail = std::to_string(fmmr_cfg.seeds.size()) + " seeds, " + std::to_string(fmmr.rows.size()) +
                         " rows, " + std::to_string(fmmr.failed_cells) + " failed; mean eta_attention by pr:";
    std::vector<double> means;
    for (double pr : fmmr_cfg.pr_values) {
      means.push_back(Mean(
          fmmr.rows, [&](const CellResult& r) { return r.pr == pr; },
          [](const CellResult& r) { return r.eta_attention; }));
      detail += " " + Fmt("%g", pr) + "=" + Fmt("%.3f", means.back());
    }
    bool ok = fmmr_cfg.seeds.size() >= 20 && fmmr.failed_cells == 0 && means.size() == 5;
    for (std::size_t i = 1; ok && i < means.size(); ++i) ok = means[i] > means[i - 1];
    ok = ok && means[1] > 0.0 && means[4] > means[1];
    return Outcome{ok, detail};
  });

  Check(7, 1, [&] {
    const double m = Mean(
        fmmr.rows, [](const CellResult& r) { return r.pr > 0.0; },
        [](const CellResult& r) -> std::optional<double> {
          if (!r.delta_ndcg_pct) return std::nullopt;
          return std::abs(*r.delta_ndcg_pct);
        });
    double worst = 0.0;
    for (const auto& r : fmmr.rows) {
      if (r.pr > 0.0 && r.delta_ndcg_pct) worst = std::max(worst, std::abs(*r.delta_ndcg_pct));
    }
    return Outcome{m < 2.0, "mean |delta NDCG| over attacked cells " + Fmt("%.3f", m) + "% (max " +
                                Fmt("%.3f", worst) + "%)"};
  });

  Check(8, 120, [&] {
    ExperimentConfig cfg = fmmr_cfg;
    cfg.rerankers = {RerankerKind::kDetConstSort};
    cfg.pr_values = {0.0};
    cfg.label_mode = LabelMode::kInferred;
    const auto inferred = RunGrid(cfg, Jobs(), cache);
    const double eta_inferred = Mean(
        inferred.rows, [](const CellResult&) { return true; }, [](const CellResult& r) { return r.eta_skew; });
    cfg.label_mode = LabelMode::kGroundTruth;
    const auto truth = RunGrid(cfg, Jobs(), cache);
    std::size_t nonzero = 0;
    for (const auto& r : truth.rows) {
      if (r.failed || !r.eta_skew || !r.eta_attention || *r.eta_skew != 0.0 || *r.eta_attention != 0.0) ++nonzero;
    }
    const bool ok = eta_inferred > 0.0 && nonzero == 0 && inferred.failed_cells == 0;
    return Outcome{ok, "pr=0 DetConstSort: inferred-label mean eta_skew " + Fmt("%.3f", eta_inferred) +
                           " over " + std::to_string(inferred.rows.size()) + " rows; ground-truth rows with eta != 0: " +
                           std::to_string(nonzero) + "/" + std::to_string(truth.rows.size())};
  });

  Check(9, 1, [&] {
    std::string detail = "mean eta_attention(light_man) at pr=1 over " + std::to_string(fmmr_cfg.seeds.size()) +
                         " seeds:";
    bool ok = fmmr_cfg.seeds.size() >= 20;
    for (const std::string obj : {"light_man->dark_man", "dark_man->light_man"}) {
      const double m = Mean(
          fmmr.rows, [&](const CellResult& r) { return r.pr == 1.0 && r.objective == obj; },
          [](const CellResult& r) { return r.eta_attention; });
      ok = ok && m > 0.0;
      detail += " " + obj + "=" + Fmt("%.3f", m);
    }
    return Outcome{ok, detail};
  });

  Check(10, 600, [&] {
    const fs::path cfg_path = work / "determinism.json";
    {
      std::ofstream out(cfg_path);
      out << R"({"queries": ["tennis", "pizza", "table"], "rerankers": ["fmmr", "detconstsort"],
                 "label_mode": "inferred", "pr_values": [0, 0.2, 1.0], "seeds": 2})";
    }
    auto run = [&](const std::string& dir, int jobs) {
      const std::string cmd = std::string("\"") + FAIRRANK_CLI + "\" run --config " + cfg_path.string() +
                              " --out " + (work / dir).string() + " --jobs " + std::to_string(jobs) +
                              " > /dev/null 2>&1";
      const int status = std::system(cmd.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) throw std::runtime_error("run exited abnormally");
      std::ifstream in(work / dir / "results.csv", std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    const std::string a = run("det_a", 1);
    const std::string b = run("det_b", Jobs() + 2);
    const std::string c = run("det_a", 3);  // warm model cache
    const bool ok = !a.empty() && a == b && a == c;
    const auto lines = std::count(a.begin(), a.end(), '\n');
    return Outcome{ok, "results.csv (" + std::to_string(lines) + " lines) identical across --jobs 1, " +
                           std::to_string(Jobs() + 2) + " and a cached rerun: " + (ok ? "yes" : "no")};
  });

  fs::remove_all(work);
  std::printf("%d of 10 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
