// SPDX-License-Identifier: Apache-2.0
#include "hippro/model.hpp"

#include <cmath>
#include <random>

#include "hippro/error.hpp"

namespace hippro {

namespace {
constexpr double kLnEps = 1e-5;
} // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0) fail("config", "vocab_size must be positive");
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ffn == 0)
    fail("config", "model dimensions must be positive");
  if (d_model % n_heads != 0)
    fail("config", "d_model must be divisible by n_heads");
  if (max_len == 0) fail("config", "max_len must be positive");
}

SeqModel::SeqModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  auto randn = [&](std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (double& v : t.d) v = dist(rng);
    return t;
  };
  auto ones = [](std::size_t n) {
    Tensor t(1, n);
    t.fill(1.0);
    return t;
  };
  const std::size_t d = cfg_.d_model;

  embedding_ = randn(cfg_.vocab_size, d);
  enc_.resize(cfg_.n_layers);
  for (EncLayer& l : enc_) {
    l.ln1 = {ones(d), Tensor(1, d)};
    l.attn = {randn(d, d), randn(d, d), randn(d, d), randn(d, d)};
    l.ln2 = {ones(d), Tensor(1, d)};
    l.ffn = {randn(d, cfg_.d_ffn), Tensor(1, cfg_.d_ffn), randn(cfg_.d_ffn, d),
             Tensor(1, d)};
  }
  enc_lnf_ = {ones(d), Tensor(1, d)};
  dec_.resize(cfg_.n_layers);
  for (DecLayer& l : dec_) {
    l.ln1 = {ones(d), Tensor(1, d)};
    l.self_attn = {randn(d, d), randn(d, d), randn(d, d), randn(d, d)};
    l.ln2 = {ones(d), Tensor(1, d)};
    l.cross_attn = {randn(d, d), randn(d, d), randn(d, d), randn(d, d)};
    l.ln3 = {ones(d), Tensor(1, d)};
    l.ffn = {randn(d, cfg_.d_ffn), Tensor(1, cfg_.d_ffn), randn(cfg_.d_ffn, d),
             Tensor(1, d)};
  }
  dec_lnf_ = {ones(d), Tensor(1, d)};
  lm_w_ = randn(d, cfg_.vocab_size);
  lm_b_ = Tensor(1, cfg_.vocab_size);
}

std::vector<std::pair<std::string, Tensor*>> SeqModel::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embedding", &embedding_);
  auto add_ln = [&](const std::string& p, Ln& ln) {
    out.emplace_back(p + ".g", &ln.g);
    out.emplace_back(p + ".b", &ln.b);
  };
  auto add_attn = [&](const std::string& p, Attn& a) {
    out.emplace_back(p + ".wq", &a.wq);
    out.emplace_back(p + ".wk", &a.wk);
    out.emplace_back(p + ".wv", &a.wv);
    out.emplace_back(p + ".wo", &a.wo);
  };
  auto add_ffn = [&](const std::string& p, Ffn& f) {
    out.emplace_back(p + ".w1", &f.w1);
    out.emplace_back(p + ".b1", &f.b1);
    out.emplace_back(p + ".w2", &f.w2);
    out.emplace_back(p + ".b2", &f.b2);
  };
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    add_ln(p + ".ln1", enc_[i].ln1);
    add_attn(p + ".attn", enc_[i].attn);
    add_ln(p + ".ln2", enc_[i].ln2);
    add_ffn(p + ".ffn", enc_[i].ffn);
  }
  add_ln("enc.ln_f", enc_lnf_);
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    add_ln(p + ".ln1", dec_[i].ln1);
    add_attn(p + ".self", dec_[i].self_attn);
    add_ln(p + ".ln2", dec_[i].ln2);
    add_attn(p + ".cross", dec_[i].cross_attn);
    add_ln(p + ".ln3", dec_[i].ln3);
    add_ffn(p + ".ffn", dec_[i].ffn);
  }
  add_ln("dec.ln_f", dec_lnf_);
  out.emplace_back("lm_head.w", &lm_w_);
  out.emplace_back("lm_head.b", &lm_b_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> SeqModel::named_params() const {
  auto mut = const_cast<SeqModel*>(this)->named_params();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(n, t);
  return out;
}

std::size_t SeqModel::backbone_param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_params()) n += t->size();
  return n;
}

BoundStack SeqModel::bind(Tape& t, const HierarchicalPrefixStack& stack) const {
  if (stack.alpha.dim != cfg_.d_model || stack.alpha.n_layers != cfg_.n_layers)
    fail("config", "prefix stack shape does not match model config");
  BoundStack b;
  b.stack = &stack;
  b.alpha = t.leaf(stack.alpha.params, stack.alpha.trainable);
  b.beta = t.leaf(stack.beta.params, stack.beta.trainable);
  if (stack.gamma) b.gamma = t.leaf(stack.gamma->params, stack.gamma->trainable);
  if (stack.delta) b.delta = t.leaf(stack.delta->params, stack.delta->trainable);
  return b;
}

SeqModel::ThetaNodes SeqModel::bind_theta(Tape& t) const {
  ThetaNodes th;
  auto leaf = [&](const Tensor& v) { return t.leaf(v, false); };
  auto ln = [&](const Ln& l) { return LnNodes{leaf(l.g), leaf(l.b)}; };
  auto attn = [&](const Attn& a) {
    return AttnNodes{leaf(a.wq), leaf(a.wk), leaf(a.wv), leaf(a.wo)};
  };
  auto ffn = [&](const Ffn& f) {
    return FfnNodes{leaf(f.w1), leaf(f.b1), leaf(f.w2), leaf(f.b2)};
  };
  th.embedding = leaf(embedding_);
  for (const EncLayer& l : enc_)
    th.enc.push_back({ln(l.ln1), attn(l.attn), ln(l.ln2), ffn(l.ffn)});
  th.enc_lnf = ln(enc_lnf_);
  for (const DecLayer& l : dec_)
    th.dec.push_back(
        {ln(l.ln1), attn(l.self_attn), ln(l.ln2), attn(l.cross_attn), ln(l.ln3), ffn(l.ffn)});
  th.dec_lnf = ln(dec_lnf_);
  th.lm_w = leaf(lm_w_);
  th.lm_b = leaf(lm_b_);
  return th;
}

Tape::NodeId SeqModel::embed(Tape& t, const ThetaNodes& th,
                             const std::vector<TokenId>& ids) const {
  for (TokenId id : ids)
    if (id >= cfg_.vocab_size) fail("range", "token id outside vocabulary");
  Tape::NodeId x = t.gather_rows(th.embedding, ids);
  return t.add_const(x, positional_encoding(ids.size(), cfg_.d_model));
}

std::pair<Tape::NodeId, Tape::NodeId> SeqModel::prefix_kv(Tape& t, const BoundStack* pfx,
                                                          std::size_t layer,
                                                          Side side) const {
  if (!pfx || !pfx->stack) return {BoundStack::kNone, BoundStack::kNone};
  const HierarchicalPrefixStack& s = *pfx->stack;
  const std::size_t d = cfg_.d_model;
  auto layer_slices = [&](const PrefixAdapter& a, Tape::NodeId leaf) {
    const std::size_t r0 = layer * a.n_virtual;
    const std::size_t r1 = r0 + a.n_virtual;
    return std::pair<Tape::NodeId, Tape::NodeId>{t.slice(leaf, r0, r1, 0, d),
                                                 t.slice(leaf, r0, r1, d, 2 * d)};
  };
  Tape::NodeId k, v;
  if (side == Side::Encoder) {
    std::tie(k, v) = layer_slices(s.alpha, pfx->alpha);
    if (s.gamma) {
      auto [k2, v2] = layer_slices(*s.gamma, pfx->gamma);
      k = t.concat_rows(k, k2);
      v = t.concat_rows(v, v2);
    }
  } else {
    std::tie(k, v) = layer_slices(s.beta, pfx->beta);
    if (s.delta) {
      auto [k2, v2] = layer_slices(*s.delta, pfx->delta);
      k = t.concat_rows(k, k2);
      v = t.concat_rows(v, v2);
    }
  }
  return {k, v};
}

Tape::NodeId SeqModel::ffn_block(Tape& t, Tape::NodeId x, const FfnNodes& f) const {
  Tape::NodeId h = t.gelu(t.add_bias(t.matmul(x, f.w1), f.b1));
  return t.add_bias(t.matmul(h, f.w2), f.b2);
}

Tape::NodeId SeqModel::encode_impl(Tape& t, const ThetaNodes& th,
                                   const std::vector<TokenId>& src,
                                   const BoundStack* pfx) const {
  if (src.empty()) fail("input", "encoder input is empty");
  if (src.size() > cfg_.max_len) fail("input", "encoder input exceeds max_len");
  Tape::NodeId x = embed(t, th, src);
  const bool attend = !pfx || pfx->attendable;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const EncLayerNodes& ln = th.enc[l];
    Tape::NodeId a_in = t.layer_norm(x, ln.ln1.g, ln.ln1.b, kLnEps);
    Tape::NodeId q = t.matmul(a_in, ln.attn.wq);
    Tape::NodeId k = t.matmul(a_in, ln.attn.wk);
    Tape::NodeId v = t.matmul(a_in, ln.attn.wv);
    auto [pk, pv] = prefix_kv(t, pfx, l, Side::Encoder);
    std::size_t plen = 0;
    if (pk != BoundStack::kNone) {
      plen = t.value(pk).rows;
      k = t.concat_rows(pk, k);
      v = t.concat_rows(pv, v);
    }
    Tape::NodeId att = t.attention(q, k, v, cfg_.n_heads, {plen, false, attend});
    x = t.add(x, t.matmul(att, ln.attn.wo));
    Tape::NodeId f_in = t.layer_norm(x, ln.ln2.g, ln.ln2.b, kLnEps);
    x = t.add(x, ffn_block(t, f_in, ln.ffn));
  }
  return t.layer_norm(x, th.enc_lnf.g, th.enc_lnf.b, kLnEps);
}

Tape::NodeId SeqModel::decode_impl(Tape& t, const ThetaNodes& th, Tape::NodeId enc_out,
                                   const std::vector<TokenId>& dec_in,
                                   const BoundStack* pfx) const {
  if (dec_in.empty()) fail("input", "decoder input is empty");
  if (dec_in.size() > cfg_.max_len) fail("input", "decoder input exceeds max_len");
  Tape::NodeId y = embed(t, th, dec_in);
  const bool attend = !pfx || pfx->attendable;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const DecLayerNodes& ln = th.dec[l];
    // Masked self-attention: causal over real positions, full prefix view.
    Tape::NodeId a_in = t.layer_norm(y, ln.ln1.g, ln.ln1.b, kLnEps);
    Tape::NodeId q = t.matmul(a_in, ln.self_attn.wq);
    Tape::NodeId k = t.matmul(a_in, ln.self_attn.wk);
    Tape::NodeId v = t.matmul(a_in, ln.self_attn.wv);
    auto [pk, pv] = prefix_kv(t, pfx, l, Side::Decoder);
    std::size_t plen = 0;
    if (pk != BoundStack::kNone) {
      plen = t.value(pk).rows;
      k = t.concat_rows(pk, k);
      v = t.concat_rows(pv, v);
    }
    Tape::NodeId att = t.attention(q, k, v, cfg_.n_heads, {plen, true, attend});
    y = t.add(y, t.matmul(att, ln.self_attn.wo));
    // Cross-attention over encoder states (optionally prefixed too).
    Tape::NodeId c_in = t.layer_norm(y, ln.ln2.g, ln.ln2.b, kLnEps);
    Tape::NodeId cq = t.matmul(c_in, ln.cross_attn.wq);
    Tape::NodeId ck = t.matmul(enc_out, ln.cross_attn.wk);
    Tape::NodeId cv = t.matmul(enc_out, ln.cross_attn.wv);
    std::size_t cplen = 0;
    if (cfg_.cross_prefix && pk != BoundStack::kNone) {
      cplen = plen;
      ck = t.concat_rows(pk, ck);
      cv = t.concat_rows(pv, cv);
    }
    Tape::NodeId catt = t.attention(cq, ck, cv, cfg_.n_heads, {cplen, false, attend});
    y = t.add(y, t.matmul(catt, ln.cross_attn.wo));
    Tape::NodeId f_in = t.layer_norm(y, ln.ln3.g, ln.ln3.b, kLnEps);
    y = t.add(y, ffn_block(t, f_in, ln.ffn));
  }
  y = t.layer_norm(y, th.dec_lnf.g, th.dec_lnf.b, kLnEps);
  Tape::NodeId logits = t.add_bias(t.matmul(y, th.lm_w), th.lm_b);
  return t.log_softmax_rows(logits);
}

Tape::NodeId SeqModel::encode(Tape& t, const std::vector<TokenId>& src,
                              const BoundStack* pfx) const {
  ThetaNodes th = bind_theta(t);
  return encode_impl(t, th, src, pfx);
}

Tape::NodeId SeqModel::decode_logprobs(Tape& t, Tape::NodeId enc_out,
                                       const std::vector<TokenId>& dec_in,
                                       const BoundStack* pfx) const {
  ThetaNodes th = bind_theta(t);
  return decode_impl(t, th, enc_out, dec_in, pfx);
}

std::vector<TokenId> shifted_decoder_input(const std::vector<TokenId>& tgt) {
  if (tgt.empty()) fail("input", "target sequence is empty");
  if (tgt.back() != Vocabulary::kEos)
    fail("input", "target sequence must end with the end-of-sequence token");
  std::vector<TokenId> in;
  in.reserve(tgt.size());
  in.push_back(Vocabulary::kBos);
  in.insert(in.end(), tgt.begin(), tgt.end() - 1);
  return in;
}

Tensor SeqModel::forward_logprobs(const std::vector<TokenId>& src,
                                  const std::vector<TokenId>& tgt,
                                  const HierarchicalPrefixStack* stack) const {
  Tape t;
  ThetaNodes th = bind_theta(t);
  BoundStack bound;
  if (stack) bound = bind(t, *stack);
  const BoundStack* pfx = stack ? &bound : nullptr;
  Tape::NodeId enc = encode_impl(t, th, src, pfx);
  Tape::NodeId lp = decode_impl(t, th, enc, shifted_decoder_input(tgt), pfx);
  const Tensor& rows = t.value(lp);
  Tensor out(tgt.size(), 1);
  for (std::size_t i = 0; i < tgt.size(); ++i) out.at(i, 0) = rows.at(i, tgt[i]);
  return out;
}

double SeqModel::sequence_logprob(const std::vector<TokenId>& src,
                                  const std::vector<TokenId>& tgt,
                                  const HierarchicalPrefixStack* stack,
                                  bool mean) const {
  Tensor lp = forward_logprobs(src, tgt, stack);
  double s = 0.0;
  for (double v : lp.d) s += v;
  return mean ? s / static_cast<double>(lp.rows) : s;
}

std::vector<TokenId> SeqModel::greedy_decode(const std::vector<TokenId>& src,
                                             const HierarchicalPrefixStack* stack,
                                             std::size_t max_new) const {
  Tape t;
  ThetaNodes th = bind_theta(t);
  BoundStack bound;
  if (stack) bound = bind(t, *stack);
  const BoundStack* pfx = stack ? &bound : nullptr;
  Tape::NodeId enc = encode_impl(t, th, src, pfx);

  std::vector<TokenId> toks{Vocabulary::kBos};
  std::vector<TokenId> out;
  while (out.size() < max_new && toks.size() < cfg_.max_len) {
    Tape::NodeId lp = decode_impl(t, th, enc, toks, pfx);
    const Tensor& rows = t.value(lp);
    const std::size_t last = rows.rows - 1;
    TokenId best = 0;
    double best_lp = rows.at(last, 0);
    for (TokenId j = 1; j < cfg_.vocab_size; ++j)
      if (rows.at(last, j) > best_lp) { // strict: ties keep the lowest id
        best_lp = rows.at(last, j);
        best = j;
      }
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    toks.push_back(best);
  }
  return out;
}

Tensor positional_encoding(std::size_t n, std::size_t d) {
  Tensor pe(n, d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i * 2 < d; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                 static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe.at(pos, 2 * i) = std::sin(angle);
      if (2 * i + 1 < d) pe.at(pos, 2 * i + 1) = std::cos(angle);
    }
  return pe;
}

} // namespace hippro
