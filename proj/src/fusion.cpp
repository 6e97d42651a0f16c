#include "cellflow/fusion.hpp"

#include <cmath>
#include <numeric>

#include "cellflow/error.hpp"
#include "cellflow/nn/optim.hpp"
#include "cellflow/nn/rng.hpp"

namespace cellflow::fusion {

using nn::Binder;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

nn::Mlp scorer(const FusionConfig& c) { return {"fusion.score", {2 * c.poi_dim, c.score_hidden, 2}}; }
nn::Dense projector(const FusionConfig& c) { return {"fusion.proj", c.poi_dim, c.dim, false}; }
nn::Mlp pooler(const FusionConfig& c) { return {"fusion.pool", {c.dim, c.pool_hidden, 1}}; }
nn::AttentionBlock block(const FusionConfig& c) { return {"fusion.block", c.dim, c.ffn}; }
nn::Dense readout(const FusionConfig& c) { return {"fusion.readout", c.dim, c.dim, false}; }
nn::Dense recon_v(const FusionConfig& c) { return {"fusion.recon_v", c.dim, c.dim, false}; }
nn::Dense recon_p(const FusionConfig& c) { return {"fusion.recon_p", c.dim, c.dim, false}; }

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void check_dim(std::span<const double> v, std::size_t want, const char* what) {
  if (v.size() != want) {
    throw InvalidInput(std::string(what) + " has dimension " + std::to_string(v.size()) + ", model expects " +
                       std::to_string(want));
  }
}

void check_mask(int m) {
  if (m != 0 && m != 1) throw InvalidInput("mask indicators must be 0 or 1");
}

void check_site(const FusionConfig& cfg, const LocationInput& site) {
  if (site.visual) check_dim(*site.visual, cfg.dim, "visual embedding");
  for (const auto& r : site.pois.records) {
    check_dim(r.address, cfg.poi_dim, "POI address embedding");
    check_dim(r.context, cfg.poi_dim, "POI context embedding");
  }
}


}  // namespace

FusionModel init_fusion(const FusionConfig& config, std::uint64_t seed) {
  FusionModel m;
  m.config = config;
  m.params.seed = seed;
  nn::Rng rng(seed);
  scorer(config).init(m.params, rng);
  projector(config).init(m.params, rng);
  pooler(config).init(m.params, rng);
  for (const char* tok : {"fusion.v_mask", "fusion.p_mask", "fusion.t_fuse"})
    m.params.add(tok, nn::fan_in_uniform(rng, config.dim, 1, config.dim));
  block(config).init(m.params, rng);
  readout(config).init(m.params, rng);
  recon_v(config).init(m.params, rng);
  recon_p(config).init(m.params, rng);
  return m;
}

namespace graph {

Var project_pois(Binder& bind, const FusionConfig& cfg, const PoiSet& pois, Var* alpha_out) {
  const std::size_t k = pois.records.size();
  if (k == 0) throw InvalidInput("project_pois: empty POI set");
  Tensor ea(k, cfg.poi_dim), es(k, cfg.poi_dim);
  for (std::size_t i = 0; i < k; ++i) {
    check_dim(pois.records[i].address, cfg.poi_dim, "POI address embedding");
    check_dim(pois.records[i].context, cfg.poi_dim, "POI context embedding");
    for (std::size_t j = 0; j < cfg.poi_dim; ++j) {
      ea(i, j) = pois.records[i].address[j];
      es(i, j) = pois.records[i].context[j];
    }
  }
  Tape& tape = bind.tape();
  Var a = tape.constant(std::move(ea));
  Var s = tape.constant(std::move(es));
  Var alpha = nn::softmax_rows(scorer(cfg)(bind, nn::concat_cols({a, s})));
  if (alpha_out) *alpha_out = alpha;
  Var fused = nn::add(nn::mul(a, nn::slice_cols(alpha, 0, 1)), nn::mul(s, nn::slice_cols(alpha, 1, 1)));
  return nn::l2_normalize_rows(projector(cfg)(bind, fused));
}

Var pool(Binder& bind, const FusionConfig& cfg, const Var& projected, Var* beta_out) {
  if (projected.rows() == 0) throw InvalidInput("pool: no POIs");
  Var logits = nn::transpose(pooler(cfg)(bind, projected));  // 1 x K
  Var beta = nn::softmax_rows(logits);
  if (beta_out) *beta_out = beta;
  return nn::matmul(beta, projected);
}

Var mask(Binder& bind, const Var& x, const std::string& token, int m) {
  check_mask(m);
  Tape& tape = bind.tape();
  Var keep = tape.constant(Tensor::scalar(1.0 - m));
  Var use = tape.constant(Tensor::scalar(static_cast<double>(m)));
  return nn::add(nn::mul(keep, x), nn::mul(use, bind(token)));
}

Fused fuse(Binder& bind, const FusionConfig& cfg, const Var& v_tilde, const Var& p_tilde) {
  if (v_tilde.cols() != cfg.dim || p_tilde.cols() != cfg.dim)
    throw InvalidInput("fuse: token width does not match model dimension");
  Var tokens = nn::concat_rows({bind("fusion.t_fuse"), v_tilde, p_tilde});
  auto out = block(cfg)(bind, tokens);
  Fused f;
  f.c = nn::l2_normalize_rows(readout(cfg)(bind, nn::slice_rows(out.hidden, 0, 1)));
  f.h_v = nn::slice_rows(out.hidden, 1, 1);
  f.h_p = nn::slice_rows(out.hidden, 2, 1);
  f.attention = out.weights;
  return f;
}

Var reconstruction_loss(Binder& bind, const FusionConfig& cfg, const Fused& f, const Var& v, const Var& p,
                        int m_visual, int m_poi) {
  check_mask(m_visual);
  check_mask(m_poi);
  if (m_visual + m_poi == 0) throw InvalidInput("reconstruction_loss: no modality is masked");
  Tape& tape = bind.tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  if (m_visual) {
    Var v_hat = nn::l2_normalize_rows(recon_v(cfg)(bind, f.h_v));
    total = nn::add(total, nn::add_scalar(nn::negate(nn::sum(nn::mul(v_hat, v))), 1.0));
  }
  if (m_poi) {
    Var p_hat = nn::l2_normalize_rows(recon_p(cfg)(bind, f.h_p));
    total = nn::add(total, nn::add_scalar(nn::negate(nn::sum(nn::mul(p_hat, p))), 1.0));
  }
  return total;
}

Var site_loss(Binder& bind, const FusionConfig& cfg, const LocationInput& site, int m_visual, int m_poi) {
  check_site(cfg, site);
  Tape& tape = bind.tape();
  const bool has_poi = !site.pois.records.empty();
  if (!site.visual && !m_visual) throw InvalidInput("site_loss: visual embedding missing but not masked");
  if (!has_poi && !m_poi) throw InvalidInput("site_loss: POIs missing but not masked");

  Var v = tape.constant(site.visual ? Tensor::row(*site.visual) : Tensor(1, cfg.dim));
  Var p = tape.constant(Tensor(1, cfg.dim));
  Var p_target = p;
  if (has_poi) {
    p = pool(bind, cfg, project_pois(bind, cfg, site.pois));
    p_target = tape.constant(p.value());
  }
  Fused f = fuse(bind, cfg, mask(bind, v, "fusion.v_mask", m_visual), mask(bind, p, "fusion.p_mask", m_poi));
  return reconstruction_loss(bind, cfg, f, v, p_target, m_visual, m_poi);
}

}  // namespace graph

PoiPair fuse_poi_pair(const FusionModel& model, const PoiRecord& rec) {
  Tape tape;
  Binder bind(tape, model.params, false);
  Var alpha;
  Var p = graph::project_pois(bind, model.config, PoiSet{{rec}}, &alpha);
  return {to_vec(p.value()), {alpha.value()[0], alpha.value()[1]}};
}

std::optional<PooledPoi> pool_pois(const FusionModel& model, std::span<const std::vector<double>> projected) {
  if (projected.empty()) return std::nullopt;
  const std::size_t d = model.config.dim;
  Tensor pt(projected.size(), d);
  for (std::size_t i = 0; i < projected.size(); ++i) {
    check_dim(projected[i], d, "projected POI");
    for (std::size_t j = 0; j < d; ++j) pt(i, j) = projected[i][j];
  }
  Tape tape;
  Binder bind(tape, model.params, false);
  Var beta;
  Var p = graph::pool(bind, model.config, tape.constant(std::move(pt)), &beta);
  return PooledPoi{to_vec(p.value()), to_vec(beta.value())};
}

MaskedInputs apply_mask(const FusionModel& model, std::span<const double> v, std::span<const double> p,
                        int m_visual, int m_poi, bool training) {
  check_mask(m_visual);
  check_mask(m_poi);
  if (training && m_visual + m_poi != 1)
    throw InvalidInput("training masks must hide exactly one modality");
  const std::size_t d = model.config.dim;
  const auto& vm = model.params.at("fusion.v_mask");
  const auto& pm = model.params.at("fusion.p_mask");
  MaskedInputs out{std::vector<double>(d), std::vector<double>(d)};
  // A masked modality is never read, so callers may pass an empty span for it.
  if (!m_visual) check_dim(v, d, "visual embedding");
  if (!m_poi) check_dim(p, d, "pooled POI embedding");
  for (std::size_t i = 0; i < d; ++i) {
    out.v[i] = m_visual ? vm[i] : v[i];
    out.p[i] = m_poi ? pm[i] : p[i];
  }
  return out;
}

FusedState fuse_forward(const FusionModel& model, std::span<const double> v_tilde, std::span<const double> p_tilde) {
  const std::size_t d = model.config.dim;
  check_dim(v_tilde, d, "masked visual input");
  check_dim(p_tilde, d, "masked POI input");
  Tape tape;
  Binder bind(tape, model.params, false);
  auto f = graph::fuse(bind, model.config, tape.constant(Tensor::row({v_tilde.begin(), v_tilde.end()})),
                       tape.constant(Tensor::row({p_tilde.begin(), p_tilde.end()})));
  return {to_vec(f.c.value()), to_vec(f.h_v.value()), to_vec(f.h_p.value()), f.attention.value()};
}

double reconstruction_loss(const FusionModel& model, std::span<const double> h_v, std::span<const double> h_p,
                           std::span<const double> v, std::span<const double> p, int m_visual, int m_poi) {
  const std::size_t d = model.config.dim;
  Tape tape;
  Binder bind(tape, model.params, false);
  auto row = [&](std::span<const double> s, bool needed, const char* what) {
    if (!needed && s.empty()) return tape.constant(Tensor(1, d));
    check_dim(s, d, what);
    return tape.constant(Tensor::row({s.begin(), s.end()}));
  };
  graph::Fused f;
  f.h_v = row(h_v, m_visual, "h_v");
  f.h_p = row(h_p, m_poi, "h_p");
  return graph::reconstruction_loss(bind, model.config, f, row(v, m_visual, "visual target"),
                                    row(p, m_poi, "POI target"), m_visual, m_poi)
      .value()
      .item();
}

SpatialContext embed_location(const FusionModel& model, const std::optional<std::vector<double>>& visual,
                              const PoiSet& pois) {
  const FusionConfig& cfg = model.config;
  const bool has_poi = !pois.records.empty();
  if (!visual && !has_poi) throw InvalidInput("embed_location: both modalities are absent");
  if (visual) check_dim(*visual, cfg.dim, "visual embedding");

  Tape tape;
  Binder bind(tape, model.params, false);
  Var v = tape.constant(visual ? Tensor::row(*visual) : Tensor(1, cfg.dim));
  Var p = has_poi ? graph::pool(bind, cfg, graph::project_pois(bind, cfg, pois)) : tape.constant(Tensor(1, cfg.dim));
  auto f = graph::fuse(bind, cfg, graph::mask(bind, v, "fusion.v_mask", visual ? 0 : 1),
                       graph::mask(bind, p, "fusion.p_mask", has_poi ? 0 : 1));
  return {to_vec(f.c.value()), visual.has_value(), has_poi};
}

double evaluation_loss(const FusionModel& model, std::span<const LocationInput> sites) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& s : sites) {
    if (!s.visual || s.pois.records.empty()) continue;
    for (auto [mi, mp] : {std::pair{1, 0}, std::pair{0, 1}}) {
      Tape tape;
      Binder bind(tape, model.params, false);
      total += graph::site_loss(bind, model.config, s, mi, mp).value().item();
      ++n;
    }
  }
  if (n == 0) throw InvalidInput("evaluation_loss: no site carries both modalities");
  return total / static_cast<double>(n);
}

ReconstructionScore reconstruction_cosine(const FusionModel& model, std::span<const LocationInput> sites) {
  ReconstructionScore score;
  for (const auto& s : sites) {
    if (!s.visual || s.pois.records.empty()) continue;
    Tape tape;
    Binder bind(tape, model.params, false);
    // Loss term = 1 - cosine for the masked modality.
    score.visual_cosine += 1.0 - graph::site_loss(bind, model.config, s, 1, 0).value().item();
    score.poi_cosine += 1.0 - graph::site_loss(bind, model.config, s, 0, 1).value().item();
    ++score.sites;
  }
  if (score.sites == 0) throw InvalidInput("reconstruction_cosine: no site carries both modalities");
  score.visual_cosine /= static_cast<double>(score.sites);
  score.poi_cosine /= static_cast<double>(score.sites);
  return score;
}

FusionTrainResult train_fusion(FusionModel& model, std::span<const LocationInput> corpus, std::size_t epochs,
                               std::uint64_t seed) {
  if (corpus.empty()) throw InvalidInput("train_fusion: empty corpus");
  bool any_poi = false;
  for (const auto& s : corpus) {
    check_site(model.config, s);
    if (!s.visual && s.pois.records.empty())
      throw InvalidInput("train_fusion: site '" + s.site_id + "' has no modality");
    any_poi = any_poi || (s.visual && !s.pois.records.empty());
  }
  if (!any_poi) throw InvalidInput("train_fusion: no site carries both imagery and POIs");

  const FusionConfig& cfg = model.config;
  nn::Rng rng(seed);
  nn::Adam adam(nn::AdamConfig{cfg.lr});
  FusionTrainResult result;
  result.loss_curve.push_back(evaluation_loss(model, corpus));

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      Tape tape;
      Binder bind(tape, model.params, true);
      Var loss = tape.constant(Tensor::scalar(0.0));
      for (std::size_t j = start; j < end; ++j) {
        const LocationInput& s = corpus[order[j]];
        int mi;
        if (!s.visual) mi = 1;
        else if (s.pois.records.empty()) mi = 0;
        else mi = rng.uniform() < cfg.mask_prob ? 1 : 0;
        loss = nn::add(loss, graph::site_loss(bind, cfg, s, mi, 1 - mi));
      }
      loss = nn::scale(loss, 1.0 / static_cast<double>(end - start));
      adam.step(model.params, nn::backward(loss, bind));
    }
    result.loss_curve.push_back(evaluation_loss(model, corpus));
  }
  model.trained = true;
  model.epochs += epochs;
  model.train_seed = seed;
  return result;
}

}  // namespace cellflow::fusion
