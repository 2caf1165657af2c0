// Command-line front end: gen, train-clf, train-gap, run, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fairrank/attack.hpp"
#include "fairrank/corpus.hpp"
#include "fairrank/harness.hpp"
#include "fairrank/inference.hpp"
#include "fairrank/report.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fairrank;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitPartial = 2;

json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void WriteJson(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

// --config wins over --profile; --profile is a bundled name.
QueryProfile ResolveProfile(const std::string& config, const std::string& profile) {
  if (!config.empty()) return ProfileFromJson(ReadJson(config));
  return BundledProfile(profile);
}

struct CommonOptions {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 1;
};

int Gen(const CommonOptions& o, const std::string& profile_name) {
  const QueryProfile profile = ResolveProfile(o.config, profile_name);
  const Corpus corpus = GenerateCorpus(profile, o.seed);
  const fs::path out = o.out.empty() ? fs::path(profile.name + ".corpus.json") : fs::path(o.out);
  WriteJson(out, CorpusToJson(corpus));
  const Vector props = GroupProportions(corpus);
  std::printf("wrote %zu items to %s\n", corpus.size(), out.string().c_str());
  for (int g = 0; g < profile.groups.size(); ++g) {
    std::printf("  %-12s %.4f\n", profile.groups.name(GroupId{g}).c_str(), props[static_cast<std::size_t>(g)]);
  }
  return kExitOk;
}

int TrainClf(const CommonOptions& o, const std::string& profile_name, const std::string& variant,
             const std::string& corpus_path, int epochs) {
  const Corpus data = corpus_path.empty() ? GenerateCorpus(ResolveProfile(o.config, profile_name), o.seed)
                                          : CorpusFromJson(ReadJson(corpus_path));
  TrainConfig tc;
  tc.seed = o.seed + 1;
  if (epochs > 0) tc.epochs = epochs;
  const auto trained = TrainClassifierVariant(data, tc, variant);
  const fs::path out = o.out.empty() ? fs::path(variant + ".classifier.json") : fs::path(o.out);
  WriteJson(out, ClassifierToJson(trained.classifier));
  std::printf("wrote %s  held-out accuracy %.4f  loss %.4f -> %.4f\n", out.string().c_str(),
              trained.record.heldout_accuracy, trained.record.epoch_loss.front(), trained.record.epoch_loss.back());
  return kExitOk;
}

int TrainGap(const CommonOptions& o, const std::string& profile_name, const std::string& classifier_path,
             const std::string& objective_text, double epsilon, int epochs) {
  if (classifier_path.empty()) throw ConfigError("train-gap needs --classifier");
  const QueryProfile profile = ResolveProfile(o.config, profile_name);
  const Classifier clf = ClassifierFromJson(ReadJson(classifier_path));
  const AttackObjective objective = AttackObjective::Parse(objective_text, profile.groups);
  const Corpus data = GenerateCorpus(profile, o.seed);
  const auto [train, heldout] = SplitTrainEval(data, kGeneratorSplitRatio, DeriveSeed(o.seed, "split"));
  GeneratorTrainConfig gc;
  gc.seed = o.seed + 1;
  if (epochs > 0) gc.epochs = epochs;
  const auto trained = TrainCgap(clf, train, objective, epsilon, gc);
  const fs::path out = o.out.empty() ? fs::path("generator.json") : fs::path(o.out);
  WriteJson(out, GeneratorToJson(trained.generator, profile.groups));

  const auto before = MisclassificationRate(clf, heldout, objective);
  const auto [attacked, app] = ApplyAttack(heldout, trained.generator, 1.0, o.seed);
  const auto after = MisclassificationRate(clf, attacked, objective);
  auto pct = [](const std::optional<double>& v) { return v ? 100.0 * *v : -1.0; };
  std::printf("wrote %s  objective %s  epsilon %g\n", out.string().c_str(), objective.Name(profile.groups).c_str(),
              epsilon);
  std::printf("  held-out targeted success  %.1f%% -> %.1f%%\n", pct(before.targeted_success),
              pct(after.targeted_success));
  if (before.other_accuracy) {
    std::printf("  held-out other-group accuracy  %.1f%% -> %.1f%%\n", pct(before.other_accuracy),
                pct(after.other_accuracy));
  }
  return kExitOk;
}

int Run(const CommonOptions& o) {
  if (o.config.empty()) throw ConfigError("run needs --config");
  if (o.out.empty()) throw ConfigError("run needs --out");
  ExperimentConfig cfg = LoadExperimentConfig(o.config);
  if (o.seed_given) cfg.master_seed = o.seed;
  const auto summary = RunExperiment(cfg, o.out, o.jobs);
  std::printf("wrote %zu rows to %s\n", summary.rows.size(), (fs::path(o.out) / "results.csv").string().c_str());
  if (summary.failed_cells > 0) {
    std::fprintf(stderr, "warning: %zu cells failed; see the flags column\n", summary.failed_cells);
    return kExitPartial;
  }
  return kExitOk;
}

int Report(const CommonOptions& o, const std::string& input) {
  const std::string path = !input.empty() ? input : o.config;
  if (path.empty()) throw ConfigError("report needs a results CSV");
  const ResultsTable table = ReadResultsCsv(path);
  if (table.rows.empty()) std::fprintf(stderr, "warning: %s has no result rows\n", path.c_str());
  const fs::path out = o.out.empty() ? fs::path(path).parent_path() / "summary" : fs::path(o.out);
  const auto tables = WriteSummary(table, out);
  for (const auto& t : tables) {
    std::cout << "== eta and delta NDCG by " << t.variable << '\n';
    WriteMarginalText(std::cout, t);
    std::cout << '\n';
  }
  return kExitOk;
}

void AddCommon(CLI::App* cmd, CommonOptions& o, const std::string& config_help) {
  cmd->add_option("--config", o.config, config_help);
  cmd->add_option("--out", o.out, "Output path");
  cmd->add_option("--seed", o.seed, "Seed")->each([&o](const std::string&) { o.seed_given = true; });
  cmd->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks on fair ranking: synthetic testbed"};
  app.require_subcommand(1);
  CommonOptions o;

  std::string profile_name = "tennis";
  auto* gen = app.add_subcommand("gen", "Generate a corpus from a query profile");
  AddCommon(gen, o, "Query profile JSON");
  gen->add_option("--profile", profile_name, "Bundled profile: tennis, pizza, table, population");

  std::string variant = "ff-sim";
  std::string corpus_path;
  int epochs = 0;
  auto* clf = app.add_subcommand("train-clf", "Train a demographic classifier");
  AddCommon(clf, o, "Population profile JSON");
  std::string population_name = "population";
  clf->add_option("--profile", population_name, "Bundled profile");
  clf->add_option("--variant", variant, "df-sim or ff-sim");
  clf->add_option("--corpus", corpus_path, "Train on this corpus file instead of generating one");
  clf->add_option("--epochs", epochs, "Training epochs");

  std::string classifier_path;
  std::string objective = "dark_man->light_man";
  double epsilon = kDefaultEpsilon;
  auto* gap = app.add_subcommand("train-gap", "Train a perturbation generator against a classifier");
  AddCommon(gap, o, "Population profile JSON");
  gap->add_option("--profile", population_name, "Bundled profile");
  gap->add_option("--classifier", classifier_path, "Classifier JSON from train-clf");
  gap->add_option("--objective", objective, "e.g. dark_man->light_man, any->light_man, light_man->any");
  gap->add_option("--epsilon", epsilon, "L-infinity bound");
  gap->add_option("--epochs", epochs, "Training epochs");

  auto* run = app.add_subcommand("run", "Evaluate an experiment grid");
  AddCommon(run, o, "Experiment config JSON");

  std::string input;
  auto* report = app.add_subcommand("report", "Marginal tables from a results CSV");
  AddCommon(report, o, "Results CSV (same as the positional argument)");
  report->add_option("results", input, "Results CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return Gen(o, profile_name);
    if (clf->parsed()) return TrainClf(o, population_name, variant, corpus_path, epochs);
    if (gap->parsed()) return TrainGap(o, population_name, classifier_path, objective, epsilon, epochs);
    if (run->parsed()) return Run(o);
    if (report->parsed()) return Report(o, input);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitOk;
}
