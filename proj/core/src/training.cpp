// SPDX-License-Identifier: Apache-2.0
#include "hippro/training.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "hippro/error.hpp"
#include "hippro/parallel.hpp"
#include "hippro/sha256.hpp"

namespace hippro {

// ---------------------------------------------------------------------------
// Stage / loss names

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Strategy: return "strategy";
    case Stage::StrategyEmotion: return "strategy_emotion";
    case Stage::Orpo: return "orpo";
    case Stage::Dpo: return "dpo";
  }
  fail("state", "unhandled stage value");
}

Stage parse_stage(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "strategy") return Stage::Strategy;
  if (t == "emotion" || t == "strategy_emotion") return Stage::StrategyEmotion;
  if (t == "orpo") return Stage::Orpo;
  if (t == "dpo") return Stage::Dpo;
  fail("unknown_stage", "unknown stage '" + text + "'");
}

std::string to_string(LossName n) {
  switch (n) {
    case LossName::JFinetuned: return "j_finetuned";
    case LossName::JOr: return "j_or";
    case LossName::JFinal: return "j_final";
    case LossName::Dpo: return "dpo";
  }
  fail("state", "unhandled loss name");
}

LossName parse_loss_name(const std::string& text) {
  if (text == "j_finetuned") return LossName::JFinetuned;
  if (text == "j_or") return LossName::JOr;
  if (text == "j_final") return LossName::JFinal;
  if (text == "dpo") return LossName::Dpo;
  fail("unknown_loss", "unknown loss name '" + text + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) fail("config", "batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    fail("config", "learning_rate must be positive and finite");
  if (max_epochs == 0) fail("config", "max_epochs must be positive");
  if (early_stop_patience == 0) fail("config", "early_stop_patience must be positive");
  if (vt == 0) fail("config", "vt must be positive");
  if (epsilon < 0.0) fail("config", "epsilon must be non-negative");
  if (beta_dpo < 0.0) fail("config", "beta_dpo must be non-negative");
  if (max_new_tokens == 0) fail("config", "max_new_tokens must be positive");
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size())
    fail("input", "optimizer parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->rows, p->cols);
      v_.emplace_back(p->rows, p->cols);
    }
  }
  if (m_.size() != params.size())
    fail("state", "optimizer was initialized with a different parameter list");
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = grads[p];
    if (!w.same_shape(g)) fail("input", "gradient shape mismatch in optimizer step");
    for (std::size_t i = 0; i < w.d.size(); ++i) {
      m_[p].d[i] = b1_ * m_[p].d[i] + (1.0 - b1_) * g.d[i];
      v_[p].d[i] = b2_ * v_[p].d[i] + (1.0 - b2_) * g.d[i] * g.d[i];
      const double mhat = m_[p].d[i] / bc1;
      const double vhat = v_[p].d[i] / bc2;
      w.d[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class ByteReader {
public:
  ByteReader(const std::string& bytes, std::size_t limit) : b_(bytes), limit_(limit) {}

  bool exhausted() const { return pos_ >= limit_; }
  std::size_t remaining() const { return limit_ - pos_; }

  bool try_u32(std::uint32_t& v) {
    if (pos_ + 4 > limit_) return false;
    v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<std::uint8_t>(b_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 4;
    return true;
  }
  bool try_bytes(std::string& out, std::size_t n) {
    if (pos_ + n > limit_) return false;
    out.assign(b_, pos_, n);
    pos_ += n;
    return true;
  }
  bool try_f32(float& f) {
    std::uint32_t bits;
    if (!try_u32(bits)) return false;
    std::memcpy(&f, &bits, 4);
    return true;
  }

private:
  const std::string& b_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

TensorRecord record_from(const std::string& name, const Tensor& t,
                         const std::vector<std::uint32_t>& dims) {
  TensorRecord r;
  r.name = name;
  r.dims = dims;
  r.data.reserve(t.d.size());
  for (double v : t.d) r.data.push_back(static_cast<float>(v));
  return r;
}

std::size_t record_elements(const TensorRecord& r) {
  std::size_t n = 1;
  for (std::uint32_t d : r.dims) n *= d;
  return n;
}

const std::array<const char*, 4> kSpecialRenderings = {"<pad>", "<bos>", "<eos>", "</s>"};

} // namespace

Checkpoint make_checkpoint(const SeqModel& model, const HierarchicalPrefixStack& stack,
                           const Vocabulary& vocab, Stage stage,
                           std::uint64_t model_seed, const std::string& parent_hash) {
  Checkpoint c;
  c.stage = stage;
  c.model_seed = model_seed;
  c.model = model.config();
  c.vt = stack.alpha.n_virtual;
  c.vt_e = stack.gamma ? stack.gamma->n_virtual : 0;
  c.vocab = vocab.tokens();
  c.parent_hash = parent_hash;
  for (const auto& [name, t] : model.named_params())
    c.tensors.push_back(record_from(name, *t,
                                    {static_cast<std::uint32_t>(t->rows),
                                     static_cast<std::uint32_t>(t->cols)}));
  auto adapter_record = [](const char* name, const PrefixAdapter& a) {
    return record_from(name, a.params,
                       {static_cast<std::uint32_t>(a.n_layers),
                        static_cast<std::uint32_t>(a.n_virtual),
                        static_cast<std::uint32_t>(2 * a.dim)});
  };
  c.tensors.push_back(adapter_record("prefix.alpha", stack.alpha));
  c.tensors.push_back(adapter_record("prefix.beta", stack.beta));
  if (stack.gamma) c.tensors.push_back(adapter_record("prefix.gamma", *stack.gamma));
  if (stack.delta) c.tensors.push_back(adapter_record("prefix.delta", *stack.delta));
  return c;
}

void restore_checkpoint(const Checkpoint& c, SeqModel& model,
                        HierarchicalPrefixStack& stack, Vocabulary& vocab) {
  if (c.vocab.size() < kSpecialRenderings.size())
    fail("format", "checkpoint vocabulary is missing the special tokens");
  for (std::size_t i = 0; i < kSpecialRenderings.size(); ++i)
    if (c.vocab[i] != kSpecialRenderings[i])
      fail("format", "checkpoint vocabulary specials are out of order");
  vocab = Vocabulary::from_tokens(
      std::vector<std::string>(c.vocab.begin() + 4, c.vocab.end()));

  model = SeqModel(c.model, c.model_seed);
  std::map<std::string, const TensorRecord*> by_name;
  for (const TensorRecord& r : c.tensors) by_name[r.name] = &r;

  for (auto& [name, t] : model.named_params()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail("format", "checkpoint is missing tensor '" + name + "'");
    const TensorRecord& r = *it->second;
    if (r.dims.size() != 2 || r.dims[0] != t->rows || r.dims[1] != t->cols)
      fail("format", "tensor '" + name + "' has unexpected shape");
    for (std::size_t i = 0; i < t->d.size(); ++i) t->d[i] = static_cast<double>(r.data[i]);
  }

  auto load_adapter = [&](const char* name, Side side, PrefixStage pstage,
                          bool required) -> std::optional<PrefixAdapter> {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (required) fail("format", std::string("checkpoint is missing tensor '") + name + "'");
      return std::nullopt;
    }
    const TensorRecord& r = *it->second;
    if (r.dims.size() != 3 || r.dims[2] % 2 != 0 ||
        r.dims[2] != 2 * c.model.d_model || r.dims[0] != c.model.n_layers)
      fail("format", std::string("tensor '") + name + "' has unexpected shape");
    PrefixAdapter a;
    a.side = side;
    a.stage = pstage;
    a.n_layers = r.dims[0];
    a.n_virtual = r.dims[1];
    a.dim = r.dims[2] / 2;
    a.params = Tensor(a.n_layers * a.n_virtual, 2 * a.dim);
    for (std::size_t i = 0; i < a.params.d.size(); ++i)
      a.params.d[i] = static_cast<double>(r.data[i]);
    a.trainable = false;
    return a;
  };

  stack = HierarchicalPrefixStack{};
  stack.alpha = *load_adapter("prefix.alpha", Side::Encoder, PrefixStage::StrategyStage, true);
  stack.beta = *load_adapter("prefix.beta", Side::Decoder, PrefixStage::StrategyStage, true);
  stack.gamma = load_adapter("prefix.gamma", Side::Encoder, PrefixStage::EmotionStage, false);
  stack.delta = load_adapter("prefix.delta", Side::Decoder, PrefixStage::EmotionStage, false);
  if (stack.gamma.has_value() != stack.delta.has_value())
    fail("format", "checkpoint has only one of the stage-2 adapters");
  stack.lineage = c.parent_hash;
}

std::string save_checkpoint(const std::string& path, const Checkpoint& c) {
  nlohmann::ordered_json cfg;
  cfg["stage"] = to_string(c.stage);
  cfg["model_seed"] = c.model_seed;
  cfg["model"] = {{"vocab_size", c.model.vocab_size}, {"d_model", c.model.d_model},
                  {"n_heads", c.model.n_heads},       {"n_layers", c.model.n_layers},
                  {"d_ffn", c.model.d_ffn},           {"max_len", c.model.max_len},
                  {"cross_prefix", c.model.cross_prefix}};
  cfg["vt"] = c.vt;
  cfg["vt_e"] = c.vt_e;
  cfg["parent"] = c.parent_hash;
  cfg["vocab"] = c.vocab;
  const std::string cfg_bytes = cfg.dump();

  std::string buf;
  buf += "HPX1";
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(cfg_bytes.size()));
  buf += cfg_bytes;
  for (const TensorRecord& r : c.tensors) {
    put_u32(buf, static_cast<std::uint32_t>(r.name.size()));
    buf += r.name;
    put_u32(buf, static_cast<std::uint32_t>(r.dims.size()));
    for (std::uint32_t d : r.dims) put_u32(buf, d);
    if (r.data.size() != record_elements(r))
      fail("state", "tensor record '" + r.name + "' payload does not match its dims");
    for (float f : r.data) put_f32(buf, f);
  }
  const auto digest = Sha256::of(buf.data(), buf.size());
  buf.append(reinterpret_cast<const char*>(digest.data()), digest.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("io", "cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail("io", "short write to '" + path + "'");
  return Sha256::hex(digest);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::optional<std::string>& expected_parent) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io", "cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < 4 + 4 + 4 + 32) fail("format", "checkpoint file is too short");

  const std::size_t payload_end = bytes.size() - 32;
  if (bytes.compare(0, 4, "HPX1") != 0) fail("format", "bad checkpoint magic");

  ByteReader r(bytes, payload_end);
  std::string magic;
  r.try_bytes(magic, 4);
  std::uint32_t version = 0;
  if (!r.try_u32(version)) fail("format", "truncated checkpoint header");
  if (version != kCheckpointVersion)
    fail("version", "unsupported checkpoint version " + std::to_string(version));
  std::uint32_t cfg_len = 0;
  std::string cfg_bytes;
  if (!r.try_u32(cfg_len) || !r.try_bytes(cfg_bytes, cfg_len))
    fail("format", "truncated checkpoint config block");

  Checkpoint c;
  try {
    const auto cfg = nlohmann::json::parse(cfg_bytes);
    c.stage = parse_stage(cfg.at("stage").get<std::string>());
    c.model_seed = cfg.at("model_seed").get<std::uint64_t>();
    const auto& m = cfg.at("model");
    c.model.vocab_size = m.at("vocab_size").get<std::size_t>();
    c.model.d_model = m.at("d_model").get<std::size_t>();
    c.model.n_heads = m.at("n_heads").get<std::size_t>();
    c.model.n_layers = m.at("n_layers").get<std::size_t>();
    c.model.d_ffn = m.at("d_ffn").get<std::size_t>();
    c.model.max_len = m.at("max_len").get<std::size_t>();
    c.model.cross_prefix = m.at("cross_prefix").get<bool>();
    c.vt = cfg.at("vt").get<std::size_t>();
    c.vt_e = cfg.at("vt_e").get<std::size_t>();
    c.parent_hash = cfg.at("parent").get<std::string>();
    c.vocab = cfg.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail("format", std::string("bad checkpoint config block: ") + e.what());
  }

  std::string last_name = "(config block)";
  while (!r.exhausted()) {
    std::uint32_t name_len = 0;
    TensorRecord rec;
    if (!r.try_u32(name_len) || !r.try_bytes(rec.name, name_len))
      fail("truncated", "truncated tensor record after '" + last_name + "'");
    std::uint32_t rank = 0;
    if (!r.try_u32(rank))
      fail("truncated", "truncated tensor record '" + rec.name + "'");
    std::size_t elements = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint32_t d = 0;
      if (!r.try_u32(d)) fail("truncated", "truncated tensor record '" + rec.name + "'");
      rec.dims.push_back(d);
      elements *= d;
    }
    rec.data.reserve(elements);
    for (std::size_t i = 0; i < elements; ++i) {
      float f = 0;
      if (!r.try_f32(f)) fail("truncated", "truncated tensor record '" + rec.name + "'");
      rec.data.push_back(f);
    }
    last_name = rec.name;
    c.tensors.push_back(std::move(rec));
  }

  // Integrity comes after the structural pass so that a truncated file is
  // reported as the record it cut short, not as a bare hash mismatch.
  const auto digest = Sha256::of(bytes.data(), payload_end);
  if (std::memcmp(digest.data(), bytes.data() + payload_end, 32) != 0)
    fail("integrity", "checkpoint integrity hash mismatch");

  if (expected_parent && c.parent_hash != *expected_parent)
    fail("lineage", "checkpoint parent hash " +
                        (c.parent_hash.empty() ? std::string("(none)") : c.parent_hash) +
                        " does not match the expected parent " + *expected_parent);
  return {std::move(c), Sha256::hex(digest)};
}

std::string theta_hash(const SeqModel& model) {
  Sha256 h;
  for (const auto& [name, t] : model.named_params()) {
    h.update(name.data(), name.size());
    for (double v : t->d) {
      const float f = static_cast<float>(v);
      h.update(&f, sizeof(f));
    }
  }
  return Sha256::hex(h.digest());
}

// ---------------------------------------------------------------------------
// Stage training

namespace {

struct SupervisedItem {
  std::size_t source_index = 0; // position in the input dataset, for diagnostics
  std::vector<TokenId> prompt;
  std::vector<TokenId> target;
};

std::vector<Tensor> snapshot_params(const HierarchicalPrefixStack& s) {
  std::vector<Tensor> snap;
  for (const PrefixAdapter* a : s.adapters()) snap.push_back(a->params);
  return snap;
}

void restore_params(HierarchicalPrefixStack& s, const std::vector<Tensor>& snap) {
  auto adapters = s.adapters();
  if (adapters.size() != snap.size()) fail("state", "snapshot/stack adapter count mismatch");
  for (std::size_t i = 0; i < adapters.size(); ++i) adapters[i]->params = snap[i];
}

double supervised_example_loss(const SeqModel& model,
                               const HierarchicalPrefixStack& stack,
                               const SupervisedItem& item, std::vector<Tensor>* grads) {
  Tape t;
  BoundStack bound = model.bind(t, stack);
  Tape::NodeId enc = model.encode(t, item.prompt, &bound);
  Tape::NodeId rows =
      model.decode_logprobs(t, enc, shifted_decoder_input(item.target), &bound);
  std::vector<bool> exclude(item.target.size(), false);
  for (std::size_t i = 0; i < item.target.size(); ++i)
    exclude[i] = item.target[i] == Vocabulary::kPad;
  Tape::NodeId loss = t.nll_mean(rows, item.target, exclude);
  if (grads) {
    t.backward(loss);
    *grads = adapter_grads(t, stack, bound);
  }
  return t.value(loss).d[0];
}

} // namespace

TrainResult train_stage(const TrainConfig& cfg,
                        const std::vector<AttributedExample>& dataset,
                        const Vocabulary& vocab, SeqModel& model,
                        HierarchicalPrefixStack& stack,
                        const std::vector<PreferencePair>* pairs,
                        std::uint64_t model_seed, const std::string& parent_hash,
                        std::ostream* status) {
  cfg.validate();
  const bool supervised =
      cfg.stage == Stage::Strategy || cfg.stage == Stage::StrategyEmotion;

  // Stage/stack agreement, then trainability for this stage.
  switch (cfg.stage) {
    case Stage::Strategy:
      if (stack.has_stage2())
        fail("stage", "strategy stage expects a stack without emotion adapters");
      stack.alpha.trainable = true;
      stack.beta.trainable = true;
      break;
    case Stage::StrategyEmotion:
      if (!stack.has_stage2()) init_stage2(stack, cfg.effective_vt_e(), cfg.seed + 1);
      stack.alpha.trainable = false;
      stack.beta.trainable = false;
      stack.gamma->trainable = true;
      stack.delta->trainable = true;
      break;
    case Stage::Orpo:
    case Stage::Dpo:
      if (!stack.has_stage2())
        fail("stage", to_string(cfg.stage) +
                          " stage requires a stack trained through the emotion stage");
      for (PrefixAdapter* a : stack.adapters()) a->trainable = true;
      break;
  }

  // Materialize the stage's training and dev sets.
  std::vector<SupervisedItem> train_items, dev_items;
  std::vector<const PreferencePair*> train_pairs, dev_pairs;
  if (supervised) {
    const bool with_emotion = cfg.stage == Stage::StrategyEmotion;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const AttributedExample& ex = dataset[i];
      if (ex.split == Split::Test) continue;
      SupervisedItem item;
      item.source_index = i;
      item.prompt = serialize_prompt(
          ex.hate_speech, ex.strategy,
          with_emotion ? std::optional<Emotion>(ex.emotion) : std::nullopt, vocab);
      item.target = vocab.encode(ex.counterspeech);
      item.target.push_back(Vocabulary::kEos);
      (ex.split == Split::Train ? train_items : dev_items).push_back(std::move(item));
    }
    if (train_items.empty()) fail("input", "dataset has no train-split examples");
    if (dev_items.empty()) fail("input", "dataset has no dev-split examples");
  } else {
    if (!pairs || pairs->empty())
      fail("input", to_string(cfg.stage) + " stage requires preference pairs");
    if (pairs->size() < 2)
      fail("input", "need at least two preference pairs to hold out a dev slice");
    const std::size_t n_dev = std::max<std::size_t>(1, pairs->size() / 10);
    for (std::size_t i = 0; i < pairs->size(); ++i)
      (i + n_dev < pairs->size() ? train_pairs : dev_pairs).push_back(&(*pairs)[i]);
  }

  // DPO contrasts against the incoming (stage-1b-final) policy, frozen.
  HierarchicalPrefixStack ref_stack;
  if (cfg.stage == Stage::Dpo) {
    ref_stack = stack;
    for (PrefixAdapter* a : ref_stack.adapters()) a->trainable = false;
  }

  auto element_loss = [&](std::size_t train_pos, std::vector<Tensor>* grads) -> double {
    switch (cfg.stage) {
      case Stage::Strategy:
      case Stage::StrategyEmotion:
        return supervised_example_loss(model, stack, train_items[train_pos], grads);
      case Stage::Orpo:
        return orpo_loss(model, stack, *train_pairs[train_pos], cfg.epsilon, grads)
            .j_final;
      case Stage::Dpo:
        return dpo_loss(model, stack, ref_stack, *train_pairs[train_pos], cfg.beta_dpo,
                        grads);
    }
    fail("state", "unhandled stage");
  };
  auto dev_loss_at = [&](std::size_t dev_pos) -> double {
    switch (cfg.stage) {
      case Stage::Strategy:
      case Stage::StrategyEmotion:
        return supervised_example_loss(model, stack, dev_items[dev_pos], nullptr);
      case Stage::Orpo:
        return orpo_loss(model, stack, *dev_pairs[dev_pos], cfg.epsilon, nullptr).j_final;
      case Stage::Dpo:
        return dpo_loss(model, stack, ref_stack, *dev_pairs[dev_pos], cfg.beta_dpo,
                        nullptr);
    }
    fail("state", "unhandled stage");
  };

  const std::size_t n_train = supervised ? train_items.size() : train_pairs.size();
  const std::size_t n_dev = supervised ? dev_items.size() : dev_pairs.size();

  std::vector<PrefixAdapter*> trainables = stack.trainable_adapters();
  std::vector<Tensor*> params;
  for (PrefixAdapter* a : trainables) params.push_back(&a->params);
  Adam opt(cfg.learning_rate);

  auto eval_dev = [&]() -> double {
    std::vector<double> losses(n_dev, 0.0);
    parallel_for(n_dev, [&](std::size_t i) { losses[i] = dev_loss_at(i); });
    double sum = 0.0;
    for (double v : losses) sum += v;
    return sum / static_cast<double>(n_dev);
  };

  TrainResult res;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_snap = snapshot_params(stack);
  std::size_t since_best = 0;

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double train_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t bn = std::min(cfg.batch_size, n_train - start);
      std::vector<double> losses(bn, 0.0);
      std::vector<std::vector<Tensor>> grads(bn);
      parallel_for(bn, [&](std::size_t k) {
        losses[k] = element_loss(order[start + k], &grads[k]);
      });
      for (std::size_t k = 0; k < bn; ++k) {
        if (!std::isfinite(losses[k])) {
          std::ostringstream os;
          os << "non-finite loss in stage " << to_string(cfg.stage) << ", epoch "
             << epoch << ", batch at item " << start << "; batch items:";
          for (std::size_t j = 0; j < bn; ++j) os << ' ' << order[start + j];
          fail("nan", os.str());
        }
        train_sum += losses[k];
      }
      // Deterministic reduction: fixed batch order, then one update.
      std::vector<Tensor> mean_grads;
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor g(params[p]->rows, params[p]->cols);
        for (std::size_t k = 0; k < bn; ++k)
          for (std::size_t i = 0; i < g.d.size(); ++i) g.d[i] += grads[k][p].d[i];
        for (double& v : g.d) v /= static_cast<double>(bn);
        mean_grads.push_back(std::move(g));
      }
      opt.step(params, mean_grads);
    }
    const double train_loss = train_sum / static_cast<double>(n_train);
    const double dev_loss = eval_dev();
    if (!std::isfinite(dev_loss))
      fail("nan", "non-finite dev loss in stage " + to_string(cfg.stage) + ", epoch " +
                      std::to_string(epoch));
    res.log.push_back({epoch, train_loss, dev_loss});
    res.epochs_run = epoch;
    if (status)
      *status << "[" << to_string(cfg.stage) << "] epoch " << epoch << "/"
              << cfg.max_epochs << " train " << train_loss << " dev " << dev_loss
              << "\n";
    if (dev_loss < best) {
      best = dev_loss;
      res.best_epoch = epoch;
      best_snap = snapshot_params(stack);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }

  restore_params(stack, best_snap);
  res.best_dev = best;
  res.best = make_checkpoint(model, stack, vocab, cfg.stage, model_seed, parent_hash);
  return res;
}

// ---------------------------------------------------------------------------
// Gradient verification

double gradient_check(LossName which, const SeqModel& model,
                      HierarchicalPrefixStack& stack, const PreferencePair& pair,
                      double h, double epsilon, double beta_dpo,
                      std::size_t max_coords, std::uint64_t seed) {
  HierarchicalPrefixStack ref_stack;
  double ref_s = 0.0, ref_r = 0.0;
  if (which == LossName::Dpo) {
    ref_stack = stack;
    for (PrefixAdapter* a : ref_stack.adapters()) a->trainable = false;
    ref_s = model.sequence_logprob(pair.prompt, pair.chosen, &ref_stack, false);
    ref_r = model.sequence_logprob(pair.prompt, pair.rejected, &ref_stack, false);
  }

  auto forward = [&](bool with_grads, std::vector<Tensor>* grads) -> double {
    Tape t;
    BoundStack bound = model.bind(t, stack);
    Tape::NodeId root;
    if (which == LossName::Dpo) {
      root = dpo_graph(t, model, bound, pair, ref_s, ref_r, beta_dpo);
    } else {
      OrpoNodes n = orpo_graph(t, model, bound, pair, epsilon);
      root = which == LossName::JFinetuned ? n.j_finetuned
             : which == LossName::JOr      ? n.j_or
                                           : n.j_final;
    }
    if (with_grads) {
      t.backward(root);
      *grads = adapter_grads(t, stack, bound);
    }
    return t.value(root).d[0];
  };

  std::vector<Tensor> analytic;
  forward(true, &analytic);
  for (const Tensor& g : analytic)
    for (double v : g.d)
      if (!std::isfinite(v)) fail("gradient", "non-finite analytic gradient");

  std::vector<PrefixAdapter*> trainables = stack.trainable_adapters();
  if (trainables.size() != analytic.size())
    fail("state", "gradient/adapter bookkeeping mismatch");

  // Global flat coordinate space over all trainable entries.
  std::vector<std::size_t> offsets{0};
  for (PrefixAdapter* a : trainables)
    offsets.push_back(offsets.back() + a->params.d.size());
  const std::size_t total = offsets.back();
  if (total == 0) fail("input", "stack has no trainable entries");

  std::vector<std::size_t> coords;
  if (total <= max_coords) {
    coords.resize(total);
    std::iota(coords.begin(), coords.end(), 0);
  } else {
    std::mt19937_64 rng(seed);
    std::set<std::size_t> picked;
    std::uniform_int_distribution<std::size_t> dist(0, total - 1);
    while (picked.size() < max_coords) picked.insert(dist(rng));
    coords.assign(picked.begin(), picked.end());
  }

  double max_rel = 0.0;
  for (std::size_t flat : coords) {
    std::size_t a = 0;
    while (flat >= offsets[a + 1]) ++a;
    const std::size_t i = flat - offsets[a];
    double& w = trainables[a]->params.d[i];
    const double orig = w;
    w = orig + h;
    const double up = forward(false, nullptr);
    w = orig - h;
    const double down = forward(false, nullptr);
    w = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double ana = analytic[a].d[i];
    const double rel = std::abs(ana - numeric) /
                       std::max({std::abs(ana), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

} // namespace hippro
