// SPDX-License-Identifier: Apache-2.0
//
// hippro — batch command line over the library: corpus synthesis and
// validation, three-stage prefix training, preference-pair building,
// generation, evaluation, statistics, significance testing, and gradient
// verification. Metrics go to files, status lines to stderr, and every
// failure is a single machine-parsable JSON line on stderr.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hippro/corpus.hpp"
#include "hippro/error.hpp"
#include "hippro/evaluation.hpp"
#include "hippro/model.hpp"
#include "hippro/objectives.hpp"
#include "hippro/prefix.hpp"
#include "hippro/training.hpp"

namespace {

using hippro::Error;
using hippro::fail;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Small utilities

std::string iso_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Outputs are write-once; --force is the only way past an existing file.
void ensure_writable(const std::string& path, bool force) {
  if (!force && std::filesystem::exists(path))
    fail("exists", "output '" + path + "' already exists; pass --force to overwrite");
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("io", "cannot open '" + path + "' for writing");
  out << content;
  if (!out) fail("io", "short write to '" + path + "'");
}

// Every command leaves a run manifest next to its primary output.
// Timestamps live only here, so the artifacts themselves stay byte-stable.
struct Manifest {
  std::string command;
  std::string config_path;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string started;
  std::map<std::string, std::string> lineage; // e.g. parent / output checkpoint

  void write(const std::string& primary_out) const {
    ordered_json j;
    j["command"] = command;
    j["config"] = config_path;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["started"] = started;
    j["finished"] = iso_utc_now();
    j["lineage"] = lineage;
    write_text(primary_out + ".manifest.json", j.dump() + "\n");
  }
};

// ---------------------------------------------------------------------------
// Config file: [model] / [train] sections of key = value lines. Flags given
// on the command line override anything read here.

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const std::uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail("config", "expected an integer for " + where + ", got '" + v + "'");
  }
}

double parse_f64(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail("config", "expected a number for " + where + ", got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config", "expected true/false for " + where + ", got '" + v + "'");
}

void apply_config_file(const std::string& path, hippro::ModelConfig& mc,
                       hippro::TrainConfig& tc, std::uint64_t& model_seed) {
  std::ifstream in(path);
  if (!in) fail("io", "cannot open config file '" + path + "'");
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = t.substr(1, t.size() - 2);
      if (section != "model" && section != "train")
        fail("config", "unknown section [" + section + "] at line " +
                           std::to_string(line_no));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      fail("config", "expected key = value at line " + std::to_string(line_no));
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    const std::string where = "[" + section + "] " + key;
    if (section == "model") {
      if (key == "d_model") mc.d_model = parse_u64(val, where);
      else if (key == "n_heads") mc.n_heads = parse_u64(val, where);
      else if (key == "n_layers") mc.n_layers = parse_u64(val, where);
      else if (key == "d_ffn") mc.d_ffn = parse_u64(val, where);
      else if (key == "max_len") mc.max_len = parse_u64(val, where);
      else if (key == "cross_prefix") mc.cross_prefix = parse_bool(val, where);
      else if (key == "model_seed") model_seed = parse_u64(val, where);
      else fail("config", "unknown key '" + key + "' in [model] at line " +
                              std::to_string(line_no));
    } else if (section == "train") {
      if (key == "batch_size") tc.batch_size = parse_u64(val, where);
      else if (key == "learning_rate") tc.learning_rate = parse_f64(val, where);
      else if (key == "max_epochs") tc.max_epochs = parse_u64(val, where);
      else if (key == "early_stop_patience") tc.early_stop_patience = parse_u64(val, where);
      else if (key == "seed") tc.seed = parse_u64(val, where);
      else if (key == "vt") tc.vt = parse_u64(val, where);
      else if (key == "vt_e") tc.vt_e = parse_u64(val, where);
      else if (key == "epsilon") tc.epsilon = parse_f64(val, where);
      else if (key == "beta_dpo") tc.beta_dpo = parse_f64(val, where);
      else if (key == "max_new_tokens") tc.max_new_tokens = parse_u64(val, where);
      else fail("config", "unknown key '" + key + "' in [train] at line " +
                              std::to_string(line_no));
    } else {
      fail("config", "key outside any section at line " + std::to_string(line_no));
    }
  }
}

// ---------------------------------------------------------------------------
// Shared option state. Each subcommand binds the subset it uses; handlers
// ask the parsed subcommand which flags were actually given.

struct Opts {
  std::string config_path;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string parent;
  std::string pairs_path;
  std::string stage;
  std::string split = "test";
  std::string loss = "j_final";
  std::string a_path, b_path;
  std::string strategy_scorer = "marker_strategy";
  std::string emotion_scorer = "marker_emotion";
  std::size_t n = 200;
  std::uint64_t seed = 0;
  std::uint64_t model_seed = 0;
  std::size_t vt = 3;
  std::size_t vt_e = 0;
  double epsilon = 0.1;
  double beta_dpo = 0.1;
  std::size_t batch_size = 4;
  double learning_rate = 1e-4;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  std::size_t max_new = 48;
  double threshold = 0.5;
  double h = 1e-5;
  double tol = 1e-4;
  std::size_t max_coords = 200;
  std::size_t expect_train = 0, expect_dev = 0, expect_test = 0;
  bool force = false;
};

// Builds the model/train configuration for one run: defaults, then the
// config file, then explicit command-line flags.
void resolve_config(const CLI::App& sub, const Opts& o, hippro::ModelConfig& mc,
                    hippro::TrainConfig& tc, std::uint64_t& model_seed) {
  if (!o.config_path.empty()) apply_config_file(o.config_path, mc, tc, model_seed);
  auto given = [&](const std::string& flag) { return sub.count(flag) > 0; };
  if (given("--seed")) tc.seed = o.seed;
  if (given("--model-seed")) model_seed = o.model_seed;
  if (given("--vt")) tc.vt = o.vt;
  if (given("--vt-emotion")) tc.vt_e = o.vt_e;
  if (given("--epsilon")) tc.epsilon = o.epsilon;
  if (given("--beta-dpo")) tc.beta_dpo = o.beta_dpo;
  if (given("--batch-size")) tc.batch_size = o.batch_size;
  if (given("--learning-rate")) tc.learning_rate = o.learning_rate;
  if (given("--max-epochs")) tc.max_epochs = o.max_epochs;
  if (given("--patience")) tc.early_stop_patience = o.patience;
  if (given("--max-new")) tc.max_new_tokens = o.max_new;
}

Manifest start_manifest(const std::string& command, const Opts& o,
                        std::uint64_t seed) {
  Manifest m;
  m.command = command;
  m.config_path = o.config_path;
  m.seed = seed;
  m.started = iso_utc_now();
  return m;
}

// ---------------------------------------------------------------------------
// Preference-pair files: one JSON object per line, token ids as arrays.

void save_pairs(const std::string& path, const std::vector<hippro::PreferencePair>& pairs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("io", "cannot open '" + path + "' for writing");
  for (const auto& p : pairs) {
    ordered_json j;
    j["prompt"] = p.prompt;
    j["chosen"] = p.chosen;
    j["rejected"] = p.rejected;
    j["degenerate"] = p.degenerate;
    out << j.dump() << '\n';
  }
  if (!out) fail("io", "short write to '" + path + "'");
}

std::vector<hippro::PreferencePair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io", "cannot open pairs file '" + path + "'");
  std::vector<hippro::PreferencePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      hippro::PreferencePair p;
      p.prompt = j.at("prompt").get<std::vector<hippro::TokenId>>();
      p.chosen = j.at("chosen").get<std::vector<hippro::TokenId>>();
      p.rejected = j.at("rejected").get<std::vector<hippro::TokenId>>();
      p.degenerate = j.at("degenerate").get<bool>();
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      fail("parse", "bad pair at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing shared by the stage-chained commands.

struct Restored {
  hippro::SeqModel model;
  hippro::HierarchicalPrefixStack stack;
  hippro::Vocabulary vocab;
  hippro::LoadedCheckpoint loaded;
};

Restored restore_from(const std::string& path,
                      const std::optional<std::string>& expected_parent) {
  Restored r;
  r.loaded = hippro::load_checkpoint(path, expected_parent);
  hippro::restore_checkpoint(r.loaded.checkpoint, r.model, r.stack, r.vocab);
  return r;
}

void require_stage(const Restored& r, hippro::Stage want, const std::string& who) {
  if (r.loaded.checkpoint.stage != want)
    fail("lineage", who + " requires a " + to_string(want) +
                        "-stage checkpoint; '" + "got '" +
                        to_string(r.loaded.checkpoint.stage) + "'");
}

std::vector<hippro::AttributedExample> split_subset(
    const std::vector<hippro::AttributedExample>& data, hippro::Split split) {
  std::vector<hippro::AttributedExample> out;
  for (const auto& ex : data)
    if (ex.split == split) out.push_back(ex);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int run_synth(const CLI::App&, const Opts& o) {
  auto manifest = start_manifest("synth", o, o.seed);
  ensure_writable(o.out, o.force);
  const auto data = hippro::synth_corpus(o.n, o.seed);
  hippro::save_dataset(o.out, data);
  manifest.outputs = {o.out};
  manifest.write(o.out);
  std::cerr << "wrote " << data.size() << " examples to " << o.out << "\n";
  return 0;
}

int run_validate(const CLI::App& sub, const Opts& o) {
  auto manifest = start_manifest("validate", o, o.seed);
  const auto data = hippro::load_dataset(o.data);
  std::map<hippro::Split, std::size_t> expected;
  if (sub.count("--expect-train")) expected[hippro::Split::Train] = o.expect_train;
  if (sub.count("--expect-dev")) expected[hippro::Split::Dev] = o.expect_dev;
  if (sub.count("--expect-test")) expected[hippro::Split::Test] = o.expect_test;
  const auto rep =
      hippro::validate_splits(data, expected.empty() ? nullptr : &expected);

  ordered_json j;
  j["total"] = rep.total;
  j["per_split"] = rep.per_split;
  j["per_cell"] = rep.per_cell;
  j["mismatches"] = rep.mismatches;
  j["ok"] = rep.ok();
  if (!o.out.empty()) {
    ensure_writable(o.out, o.force);
    write_text(o.out, j.dump() + "\n");
    manifest.inputs = {o.data};
    manifest.outputs = {o.out};
    manifest.write(o.out);
  }
  std::cerr << "validated " << rep.total << " examples; "
            << (rep.ok() ? "splits ok" : "split mismatches found") << "\n";
  if (!rep.ok()) {
    std::string msg;
    for (const auto& m : rep.mismatches) msg += (msg.empty() ? "" : "; ") + m;
    fail("split_mismatch", msg);
  }
  return 0;
}

int run_stats(const CLI::App&, const Opts& o) {
  auto manifest = start_manifest("stats", o, o.seed);
  ensure_writable(o.out, o.force);
  const auto data = hippro::load_dataset(o.data);
  write_text(o.out, hippro::corpus_stats_json(hippro::corpus_stats(data)) + "\n");
  manifest.inputs = {o.data};
  manifest.outputs = {o.out};
  manifest.write(o.out);
  std::cerr << "wrote corpus statistics for " << data.size() << " examples to "
            << o.out << "\n";
  return 0;
}

int run_train(const CLI::App& sub, const Opts& o) {
  hippro::ModelConfig mc;
  hippro::TrainConfig tc;
  std::uint64_t model_seed = 0;
  resolve_config(sub, o, mc, tc, model_seed);
  tc.stage = hippro::parse_stage(o.stage);
  auto manifest = start_manifest("train", o, tc.seed);
  ensure_writable(o.out, o.force);

  const auto data = hippro::load_dataset(o.data);
  manifest.inputs = {o.data};

  hippro::SeqModel model;
  hippro::HierarchicalPrefixStack stack;
  hippro::Vocabulary vocab;
  std::string parent_hash;
  std::vector<hippro::PreferencePair> pairs;
  const std::vector<hippro::PreferencePair>* pairs_ptr = nullptr;

  if (tc.stage == hippro::Stage::Strategy) {
    if (!o.checkpoint.empty())
      fail("input", "train --stage strategy starts fresh and takes no --checkpoint");
    vocab = hippro::Vocabulary::build(data);
    mc.vocab_size = vocab.size();
    mc.validate();
    model = hippro::SeqModel(mc, model_seed);
    stack = hippro::init_stage1(tc.vt, mc, tc.seed);
  } else {
    if (o.checkpoint.empty())
      fail("input", "train --stage " + o.stage + " requires --checkpoint");
    manifest.inputs.push_back(o.checkpoint);
    std::optional<std::string> expected;
    if (sub.count("--parent")) expected = o.parent;
    auto r = restore_from(o.checkpoint, expected);
    if (tc.stage == hippro::Stage::StrategyEmotion) {
      require_stage(r, hippro::Stage::Strategy, "train --stage emotion");
    } else {
      require_stage(r, hippro::Stage::StrategyEmotion,
                    "train --stage " + to_string(tc.stage));
      if (o.pairs_path.empty())
        fail("input", "train --stage " + to_string(tc.stage) + " requires --pairs");
      pairs = load_pairs(o.pairs_path);
      pairs_ptr = &pairs;
      manifest.inputs.push_back(o.pairs_path);
    }
    model = std::move(r.model);
    stack = std::move(r.stack);
    vocab = std::move(r.vocab);
    model_seed = r.loaded.checkpoint.model_seed;
    parent_hash = r.loaded.file_hash;
    stack.lineage = parent_hash;
    tc.vt = stack.alpha.n_virtual; // the stack on disk wins over flags
  }

  const auto res = hippro::train_stage(tc, data, vocab, model, stack, pairs_ptr,
                                       model_seed, parent_hash, &std::cerr);
  const std::string hash = hippro::save_checkpoint(o.out, res.best);

  manifest.outputs = {o.out};
  manifest.lineage["parent"] = parent_hash;
  manifest.lineage["checkpoint"] = hash;
  manifest.write(o.out);
  std::cerr << "stage " << to_string(tc.stage) << " done: best dev " << res.best_dev
            << " at epoch " << res.best_epoch << "/" << res.epochs_run << "; wrote "
            << o.out << "\n";
  return 0;
}

int run_pairs(const CLI::App& sub, const Opts& o) {
  hippro::ModelConfig mc;
  hippro::TrainConfig tc;
  std::uint64_t model_seed = 0;
  resolve_config(sub, o, mc, tc, model_seed);
  auto manifest = start_manifest("pairs", o, tc.seed);
  ensure_writable(o.out, o.force);

  auto r = restore_from(o.checkpoint, std::nullopt);
  require_stage(r, hippro::Stage::StrategyEmotion, "pairs");
  const auto data = hippro::load_dataset(o.data);

  const auto rep = hippro::build_preference_pairs(
      data, r.vocab, [&](const std::vector<hippro::TokenId>& prompt) {
        return r.model.greedy_decode(prompt, &r.stack, tc.max_new_tokens);
      });
  for (const auto& skip : rep.skips) std::cerr << "skipped: " << skip << "\n";
  save_pairs(o.out, rep.pairs);

  manifest.inputs = {o.checkpoint, o.data};
  manifest.outputs = {o.out};
  manifest.lineage["parent"] = r.loaded.file_hash;
  manifest.write(o.out);
  std::cerr << "wrote " << rep.pairs.size() << " pairs (" << rep.skips.size()
            << " skipped of " << rep.train_size << " train examples) to " << o.out
            << "\n";
  return 0;
}

int run_generate(const CLI::App& sub, const Opts& o) {
  hippro::ModelConfig mc;
  hippro::TrainConfig tc;
  std::uint64_t model_seed = 0;
  resolve_config(sub, o, mc, tc, model_seed);
  auto manifest = start_manifest("generate", o, tc.seed);
  ensure_writable(o.out, o.force);

  auto r = restore_from(o.checkpoint, std::nullopt);
  const auto data = hippro::load_dataset(o.data);
  const auto subset = split_subset(data, hippro::parse_split(o.split));
  if (subset.empty()) fail("input", "no examples in split '" + o.split + "'");

  std::ofstream out(o.out, std::ios::binary | std::ios::trunc);
  if (!out) fail("io", "cannot open '" + o.out + "' for writing");
  for (const auto& ex : subset) {
    ordered_json j;
    j["hate_speech"] = ex.hate_speech;
    j["strategy"] = to_string(ex.strategy);
    j["emotion"] = to_string(ex.emotion);
    if (ex.target_group) j["target_group"] = *ex.target_group;
    j["reference"] = ex.counterspeech;
    j["generation"] =
        hippro::generate_text(r.model, r.stack, r.vocab, ex, tc.max_new_tokens);
    out << j.dump() << '\n';
  }
  if (!out) fail("io", "short write to '" + o.out + "'");

  manifest.inputs = {o.checkpoint, o.data};
  manifest.outputs = {o.out};
  manifest.lineage["parent"] = r.loaded.file_hash;
  manifest.write(o.out);
  std::cerr << "wrote " << subset.size() << " generations to " << o.out << "\n";
  return 0;
}

int run_evaluate(const CLI::App& sub, const Opts& o) {
  hippro::ModelConfig mc;
  hippro::TrainConfig tc;
  std::uint64_t model_seed = 0;
  resolve_config(sub, o, mc, tc, model_seed);
  auto manifest = start_manifest("evaluate", o, tc.seed);
  ensure_writable(o.out, o.force);

  auto r = restore_from(o.checkpoint, std::nullopt);
  const auto data = hippro::load_dataset(o.data);
  const auto subset = split_subset(data, hippro::parse_split(o.split));
  if (subset.empty()) fail("input", "no examples in split '" + o.split + "'");

  std::vector<hippro::PreferencePair> pairs;
  const std::vector<hippro::PreferencePair>* pairs_ptr = nullptr;
  if (!o.pairs_path.empty()) {
    pairs = load_pairs(o.pairs_path);
    pairs_ptr = &pairs;
    manifest.inputs.push_back(o.pairs_path);
  }

  const auto report = hippro::evaluate_model(
      r.model, r.stack, r.vocab, subset, tc.max_new_tokens,
      hippro::get_scorer(o.strategy_scorer), hippro::get_scorer(o.emotion_scorer),
      o.threshold, pairs_ptr);
  write_text(o.out, hippro::eval_report_json(report) + "\n");

  manifest.inputs.insert(manifest.inputs.begin(), {o.checkpoint, o.data});
  manifest.outputs = {o.out};
  manifest.lineage["parent"] = r.loaded.file_hash;
  manifest.write(o.out);
  std::cerr << "evaluated " << report.n << " examples from split '" << o.split
            << "'; wrote " << o.out << "\n";
  return 0;
}

int run_ttest(const CLI::App&, const Opts& o) {
  auto manifest = start_manifest("ttest", o, o.seed);
  ensure_writable(o.out, o.force);
  auto read_samples = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("io", "cannot open samples file '" + path + "'");
    try {
      nlohmann::json j;
      in >> j;
      return j.get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      fail("parse", "samples file '" + path + "' is not a JSON number array: " +
                        e.what());
    }
  };
  const auto a = read_samples(o.a_path);
  const auto b = read_samples(o.b_path);
  const auto res = hippro::paired_ttest(a, b);
  write_text(o.out, hippro::ttest_json(res) + "\n");
  manifest.inputs = {o.a_path, o.b_path};
  manifest.outputs = {o.out};
  manifest.write(o.out);
  std::cerr << "t = " << res.t << ", p = " << res.p << " (" << res.method
            << "); wrote " << o.out << "\n";
  return 0;
}

int run_gradcheck(const CLI::App&, const Opts& o) {
  auto manifest = start_manifest("gradcheck", o, o.seed);
  ensure_writable(o.out, o.force);

  // Fixed tiny instance: big enough to exercise every op, small enough to
  // finite-difference in seconds.
  hippro::ModelConfig mc;
  mc.vocab_size = 16;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 2;
  mc.d_ffn = 16;
  mc.max_len = 64;
  hippro::SeqModel model(mc, o.seed);
  auto stack = hippro::init_stage1(2, mc, o.seed + 1);
  hippro::init_stage2(stack, 2, o.seed + 2);
  for (hippro::PrefixAdapter* a : stack.adapters()) a->trainable = true;
  hippro::PreferencePair pair;
  pair.prompt = {5, 6, 3, 7, 2};
  pair.chosen = {9, 10, 11, 2};
  pair.rejected = {12, 13, 2};

  const auto which = hippro::parse_loss_name(o.loss);
  const double max_rel = hippro::gradient_check(which, model, stack, pair, o.h,
                                                o.epsilon, o.beta_dpo, o.max_coords,
                                                o.seed);
  const bool pass = max_rel <= o.tol;

  ordered_json j;
  j["loss"] = o.loss;
  j["h"] = o.h;
  j["epsilon"] = o.epsilon;
  j["beta_dpo"] = o.beta_dpo;
  j["max_coords"] = o.max_coords;
  j["max_rel_err"] = max_rel;
  j["tol"] = o.tol;
  j["pass"] = pass;
  write_text(o.out, j.dump() + "\n");
  manifest.outputs = {o.out};
  manifest.write(o.out);
  std::cerr << "gradcheck " << o.loss << ": max relative error " << max_rel << "\n";
  if (!pass)
    fail("gradient", "max relative error " + std::to_string(max_rel) +
                         " exceeds tolerance " + std::to_string(o.tol));
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"hippro: hierarchical prefix tuning with preference optimization"};
  app.require_subcommand(1);
  Opts o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Config file ([model]/[train] sections)");
    sub->add_flag("--force", o.force, "Overwrite existing outputs");
  };
  auto add_train_opts = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Training seed");
    sub->add_option("--model-seed", o.model_seed, "Backbone init seed");
    sub->add_option("--vt", o.vt, "Stage-1 virtual tokens per adapter");
    sub->add_option("--vt-emotion", o.vt_e, "Stage-2 virtual tokens (0 = same as --vt)");
    sub->add_option("--epsilon", o.epsilon, "Ranking-term weight for orpo");
    sub->add_option("--beta-dpo", o.beta_dpo, "Temperature for dpo");
    sub->add_option("--batch-size", o.batch_size, "Examples per optimizer step");
    sub->add_option("--learning-rate", o.learning_rate, "Adam learning rate");
    sub->add_option("--max-epochs", o.max_epochs, "Epoch cap");
    sub->add_option("--patience", o.patience, "Early-stopping patience (epochs)");
    sub->add_option("--max-new", o.max_new, "Generation cap (tokens)");
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  synth->add_option("--n", o.n, "Number of examples")->required();
  synth->add_option("--seed", o.seed, "Corpus seed");
  synth->add_option("--out", o.out, "Output dataset (JSON lines)")->required();
  add_common(synth);

  auto* validate = app.add_subcommand("validate", "Check dataset splits and cells");
  validate->add_option("--data", o.data, "Dataset to validate")->required();
  validate->add_option("--out", o.out, "Optional report JSON path");
  validate->add_option("--expect-train", o.expect_train, "Expected train count");
  validate->add_option("--expect-dev", o.expect_dev, "Expected dev count");
  validate->add_option("--expect-test", o.expect_test, "Expected test count");
  add_common(validate);

  auto* stats = app.add_subcommand("stats", "Corpus statistics report");
  stats->add_option("--data", o.data, "Dataset")->required();
  stats->add_option("--out", o.out, "Statistics JSON path")->required();
  add_common(stats);

  auto* train = app.add_subcommand("train", "Train one stage");
  train->add_option("--stage", o.stage, "strategy | emotion | orpo | dpo")->required();
  train->add_option("--data", o.data, "Training dataset")->required();
  train->add_option("--out", o.out, "Checkpoint to write")->required();
  train->add_option("--checkpoint", o.checkpoint, "Parent checkpoint (later stages)");
  train->add_option("--parent", o.parent, "Expected parent hash of --checkpoint");
  train->add_option("--pairs", o.pairs_path, "Preference pairs (orpo/dpo)");
  add_train_opts(train);
  add_common(train);

  auto* pairs = app.add_subcommand("pairs", "Build preference pairs from a checkpoint");
  pairs->add_option("--checkpoint", o.checkpoint, "Emotion-stage checkpoint")->required();
  pairs->add_option("--data", o.data, "Dataset")->required();
  pairs->add_option("--out", o.out, "Pairs file to write (JSON lines)")->required();
  add_train_opts(pairs);
  add_common(pairs);

  auto* generate = app.add_subcommand("generate", "Greedy generations for one split");
  generate->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  generate->add_option("--data", o.data, "Dataset")->required();
  generate->add_option("--out", o.out, "Generations file (JSON lines)")->required();
  generate->add_option("--split", o.split, "train | dev | test (default test)");
  add_train_opts(generate);
  add_common(generate);

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on one split");
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  evaluate->add_option("--data", o.data, "Dataset")->required();
  evaluate->add_option("--out", o.out, "Report JSON path")->required();
  evaluate->add_option("--split", o.split, "train | dev | test (default test)");
  evaluate->add_option("--pairs", o.pairs_path, "Pairs for the preference margin");
  evaluate->add_option("--threshold", o.threshold, "Conformity threshold");
  evaluate->add_option("--strategy-scorer", o.strategy_scorer, "Strategy scorer name");
  evaluate->add_option("--emotion-scorer", o.emotion_scorer, "Emotion scorer name");
  add_train_opts(evaluate);
  add_common(evaluate);

  auto* ttest = app.add_subcommand("ttest", "Paired t-test over two sample files");
  ttest->add_option("--a", o.a_path, "JSON array of numbers")->required();
  ttest->add_option("--b", o.b_path, "JSON array of numbers")->required();
  ttest->add_option("--out", o.out, "Result JSON path")->required();
  add_common(ttest);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  gradcheck->add_option("--loss", o.loss, "j_finetuned | j_or | j_final | dpo");
  gradcheck->add_option("--out", o.out, "Result JSON path")->required();
  gradcheck->add_option("--seed", o.seed, "Instance seed");
  gradcheck->add_option("--h", o.h, "Finite-difference step");
  gradcheck->add_option("--epsilon", o.epsilon, "Ranking-term weight");
  gradcheck->add_option("--beta-dpo", o.beta_dpo, "DPO temperature");
  gradcheck->add_option("--max-coords", o.max_coords, "Coordinates to sample");
  gradcheck->add_option("--tol", o.tol, "Max relative error to pass");
  add_common(gradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << ordered_json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth(*synth, o);
    if (validate->parsed()) return run_validate(*validate, o);
    if (stats->parsed()) return run_stats(*stats, o);
    if (train->parsed()) return run_train(*train, o);
    if (pairs->parsed()) return run_pairs(*pairs, o);
    if (generate->parsed()) return run_generate(*generate, o);
    if (evaluate->parsed()) return run_evaluate(*evaluate, o);
    if (ttest->parsed()) return run_ttest(*ttest, o);
    if (gradcheck->parsed()) return run_gradcheck(*gradcheck, o);
    fail("usage", "no subcommand selected");
  } catch (const Error& e) {
    std::cerr << ordered_json{{"error", e.kind()}, {"message", e.what()}}.dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << ordered_json{{"error", "internal"}, {"message", e.what()}}.dump()
              << "\n";
    return 1;
  }
  return 0;
}
