#include "cellflow/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cellflow/error.hpp"
#include "cellflow/nn/optim.hpp"

namespace cellflow::gen {

using nn::Binder;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

std::string level_name(int level) { return "gen.v" + std::to_string(level); }

const LevelConfig& level_cfg(const GeneratorConfig& cfg, int level) {
  if (level < 1 || level > static_cast<int>(kLevels)) throw InvalidInput("level must be 1, 2 or 3");
  return cfg.levels[static_cast<std::size_t>(level - 1)];
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void check_len(std::span<const double> v, std::size_t want, const char* what) {
  if (v.size() != want)
    throw InvalidInput(std::string(what) + " has length " + std::to_string(v.size()) + ", expected " +
                       std::to_string(want));
}

Tensor time_tensor(std::span<const double> t, std::size_t n) {
  Tensor out(t.size(), n);
  for (std::size_t r = 0; r < t.size(); ++r) {
    auto f = time_features(t[r], n);
    std::copy(f.begin(), f.end(), out.row_span(r).begin());
  }
  return out;
}

/// Velocity net with the condition block's first-layer contribution hoisted
/// out of the Euler loop (the condition does not change between steps).
/// With gated skips the output also gets g(t) * x + g'(t) * (condition S), where
/// g and g' are linear in the time features.
struct LevelNet {
  const GeneratorConfig* cfg = nullptr;
  std::size_t len = 0;
  Var w1x, w1t, w2, b2, w3, b3, cond_hidden, skip, cskip, cgain;

  LevelNet(Binder& bind, const GeneratorConfig& c, int level, const Var& condition) : cfg(&c) {
    const LevelConfig& lc = level_cfg(c, level);
    len = lc.length;
    const std::size_t cw = c.condition_width(level);
    if (condition.cols() != cw)
      throw InvalidInput("level " + std::to_string(level) + " condition has width " +
                         std::to_string(condition.cols()) + ", expected " + std::to_string(cw));
    const std::string n = level_name(level);
    Var w1 = bind(n + ".fc1.w");
    w1x = nn::slice_rows(w1, 0, len);
    w1t = nn::slice_rows(w1, len, c.time_features);
    Var w1c = nn::slice_rows(w1, len + c.time_features, cw);
    cond_hidden = nn::add(nn::matmul(condition, w1c), bind(n + ".fc1.b"));
    w2 = bind(n + ".fc2.w");
    b2 = bind(n + ".fc2.b");
    w3 = bind(n + ".fc3.w");
    b3 = bind(n + ".fc3.b");
    if (c.gated_skip) {
      skip = bind(n + ".skip");
      cskip = nn::matmul(condition, bind(n + ".cskip"));
      cgain = bind(n + ".cgain");
    }
  }

  Var operator()(const Var& x, std::span<const double> t) const {
    if (x.cols() != len || x.rows() != t.size() || x.rows() != cond_hidden.rows())
      throw InvalidInput("velocity: state shape does not match the level or batch");
    Var temb = x.tape()->constant(time_tensor(t, cfg->time_features));
    Var h = nn::silu(nn::add(nn::add(nn::matmul(x, w1x), nn::matmul(temb, w1t)), cond_hidden));
    h = nn::silu(nn::add(nn::matmul(h, w2), b2));
    Var out = nn::add(nn::matmul(h, w3), b3);
    if (cfg->gated_skip) {
      out = nn::add(out, nn::mul(nn::matmul(temb, skip), x));
      out = nn::add(out, nn::mul(nn::matmul(temb, cgain), cskip));
    }
    return out;
  }
};

Var integrate(const LevelNet& net, const Var& x0, std::size_t steps, double clip) {
  if (steps == 0) throw InvalidInput("Euler integration needs at least one step");
  Var x = x0;
  const double dt = 1.0 / static_cast<double>(steps);
  std::vector<double> t(x0.rows());
  for (std::size_t k = 1; k <= steps; ++k) {
    std::fill(t.begin(), t.end(), static_cast<double>(k) * dt);
    x = nn::clamp(nn::add(x, nn::scale(net(x, t), dt)), -clip, clip);
  }
  return x;
}

struct Generated {
  Var d, w, u, r, pre, x;
};

/// Levels 1 -> 2 -> 3 on a batch. Noise tensors are already scaled.
Generated run_hierarchy(Binder& bind, const GeneratorConfig& cfg, const graph::Projected& proj, const Var& h_one_hot,
                        const std::array<Tensor, kLevels>& noise, std::size_t steps_override, bool zero_residual) {
  Tape& tape = bind.tape();
  auto steps = [&](int level) { return steps_override ? steps_override : level_cfg(cfg, level).steps; };
  Generated g;
  Var none;
  g.d = integrate(LevelNet(bind, cfg, 1, graph::level_condition(proj, 1, none, none, none, none)),
                  tape.constant(noise[0]), steps(1), cfg.levels[0].clip);
  g.w = integrate(LevelNet(bind, cfg, 2, graph::level_condition(proj, 2, g.d, none, none, none)),
                  tape.constant(noise[1]), steps(2), cfg.levels[1].clip);
  g.u = nn::tile_cols(g.w, decomp::kWeeks);
  if (zero_residual) {
    g.r = tape.constant(Tensor(noise[2].rows(), decomp::kHorizon));
  } else {
    g.r = integrate(LevelNet(bind, cfg, 3, graph::level_condition(proj, 3, g.d, g.w, g.u, h_one_hot)),
                    tape.constant(noise[2]), steps(3), cfg.levels[2].clip);
  }
  g.pre = nn::add(g.u, g.r);
  g.x = nn::relu(g.pre);
  return g;
}

std::array<Tensor, kLevels> draw_noise(const GeneratorConfig& cfg, const nn::Rng& root, std::size_t rows,
                                       bool sampling) {
  std::array<Tensor, kLevels> out;
  for (std::size_t l = 0; l < kLevels; ++l) {
    nn::Rng rng = root.split(l + 1);
    out[l] = nn::gaussian_sample(rng, rows, cfg.levels[l].length, sampling ? cfg.levels[l].init_noise : 1.0);
  }
  return out;
}

/// (rows * reps) x rows selector that repeats each row `reps` times in place.
Tensor repeat_matrix(std::size_t rows, std::size_t reps) {
  Tensor out(rows * reps, rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < reps; ++k) out(r * reps + k, r) = 1.0;
  return out;
}

struct Prepared {
  std::vector<double> context;
  decomp::DecompositionTargets targets;
  std::vector<double> x;
  std::size_t peak = 0;
};

Tensor stack(std::span<const Prepared* const> rows, const std::vector<double> Prepared::*field) {
  Tensor out(rows.size(), ((*rows[0]).*field).size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = (*rows[r]).*field;
    std::copy(v.begin(), v.end(), out.row_span(r).begin());
  }
  return out;
}

Tensor stack_target(std::span<const Prepared* const> rows, std::vector<double> decomp::DecompositionTargets::*field) {
  Tensor out(rows.size(), (rows[0]->targets.*field).size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = rows[r]->targets.*field;
    std::copy(v.begin(), v.end(), out.row_span(r).begin());
  }
  return out;
}

std::vector<Prepared> prepare(const GeneratorConfig& cfg, std::span<const GeneratorExample> corpus) {
  std::vector<Prepared> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) {
    check_len(ex.context, cfg.context_dim, "context");
    ex.series.validate();
    Prepared p;
    p.context = ex.context;
    p.targets = decomp::decompose_targets(ex.series);
    p.x = ex.series.x;
    p.peak = decomp::daily_peak_hour(p.targets.d_tar);
    out.push_back(std::move(p));
  }
  return out;
}

struct BatchObjective {
  Var total;
  LossBreakdown values;
};

BatchObjective batch_objective(Binder& bind, const GeneratorConfig& cfg, std::span<const Prepared* const> rows,
                               const nn::Rng& rng) {
  Tape& tape = bind.tape();
  const std::size_t b = rows.size();
  graph::Batch batch;
  batch.context = tape.constant(stack(rows, &Prepared::context));
  batch.d = tape.constant(stack_target(rows, &decomp::DecompositionTargets::d_tar));
  batch.w = tape.constant(stack_target(rows, &decomp::DecompositionTargets::w_tar));
  batch.u = tape.constant(stack_target(rows, &decomp::DecompositionTargets::u_tar));
  batch.r = tape.constant(stack_target(rows, &decomp::DecompositionTargets::r_tar));
  batch.x = tape.constant(stack(rows, &Prepared::x));
  for (const auto* p : rows) batch.peak.push_back(p->peak);

  auto proj = graph::conditions(bind, cfg, batch.context);
  Var logits = graph::peak_logits(bind, cfg, batch.context);
  std::vector<std::optional<std::size_t>> h(b);
  if (cfg.peak_head) {
    Tensor q = nn::softmax(logits.value());
    for (std::size_t r = 0; r < b; ++r) h[r] = argmax(q.row_span(r));
  }
  Var one_hot = tape.constant(graph::peak_one_hot(h));

  // Flow matching: each site contributes `draws` independent (t, x0) pairs per level.
  std::array<Var, kLevels> targets{batch.d, batch.w, batch.r};
  std::array<Var, kLevels> flow;
  for (int level = 1; level <= 3; ++level) {
    const LevelConfig& lc = cfg.levels[level - 1];
    const std::size_t n = b * lc.train_draws;
    nn::Rng lrng = rng.split(static_cast<std::uint64_t>(level));
    std::vector<double> t(n);
    for (double& v : t) v = lrng.uniform();
    Tensor z = nn::gaussian_sample(lrng, n, lc.length);
    Var cond = graph::level_condition(proj, level, batch.d, batch.w, batch.u, one_hot);
    Var x1 = targets[level - 1];
    if (lc.train_draws > 1) {
      Var rep = tape.constant(repeat_matrix(b, lc.train_draws));
      cond = nn::matmul(rep, cond);
      x1 = nn::matmul(rep, x1);
    }
    flow[level - 1] = graph::flow_loss(bind, cfg, level, x1, tape.constant(std::move(z)), t, cond);
  }

  // Generation pass for the auxiliary terms.
  Generated g = run_hierarchy(bind, cfg, proj, one_hot, draw_noise(cfg, rng.split(20), b, true),
                              cfg.train_sampling_steps, false);
  auto aux = graph::auxiliary(g.pre, g.x, batch.x, logits, batch.peak);

  BatchObjective out;
  Var total = tape.constant(Tensor::scalar(0.0));
  for (std::size_t l = 0; l < kLevels; ++l) {
    total = nn::add(total, nn::scale(flow[l], cfg.levels[l].flow_weight));
    out.values.flow[l] = flow[l].value().item();
  }
  const AuxWeights& lw = cfg.aux;
  total = nn::add(total, nn::scale(aux.bnd, lw.bnd));
  total = nn::add(total, nn::scale(aux.tmp, lw.tmp));
  total = nn::add(total, nn::scale(aux.per, lw.per));
  total = nn::add(total, nn::scale(aux.bias, lw.bias));
  total = nn::add(total, nn::scale(aux.corr, lw.corr));
  if (cfg.peak_head) total = nn::add(total, nn::scale(aux.peak, lw.peak));
  out.values.aux = {aux.bnd.value().item(),  aux.tmp.value().item(),  aux.per.value().item(),
                    aux.bias.value().item(), aux.peak.value().item(), aux.corr.value().item()};
  out.values.total = total.value().item();
  out.total = total;
  return out;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& v, double w) {
  acc.total += w * v.total;
  for (std::size_t l = 0; l < kLevels; ++l) acc.flow[l] += w * v.flow[l];
  acc.aux.bnd += w * v.aux.bnd;
  acc.aux.tmp += w * v.aux.tmp;
  acc.aux.per += w * v.aux.per;
  acc.aux.bias += w * v.aux.bias;
  acc.aux.peak += w * v.aux.peak;
  acc.aux.corr += w * v.aux.corr;
}

}  // namespace

void LevelConfig::validate() const {
  if (level < 1 || level > 3) throw InvalidInput("level must be 1, 2 or 3");
  if (steps == 0) throw InvalidInput("level " + std::to_string(level) + ": Euler steps must be >= 1");
  if (!(clip > 0.0)) throw InvalidInput("level " + std::to_string(level) + ": clip bound must be > 0");
  if (!(flow_weight >= 0.0)) throw InvalidInput("level " + std::to_string(level) + ": flow weight must be >= 0");
  if (!(init_noise >= 0.0)) throw InvalidInput("level " + std::to_string(level) + ": noise scale must be >= 0");
  if (train_draws == 0) throw InvalidInput("level " + std::to_string(level) + ": training draws must be >= 1");
  static constexpr std::size_t lengths[] = {decomp::kDailyTargetLen, decomp::kHoursPerWeek, decomp::kHorizon};
  if (length != lengths[level - 1]) throw InvalidInput("level " + std::to_string(level) + ": wrong output length");
}

std::array<LevelConfig, kLevels> default_levels() {
  return {LevelConfig{1, decomp::kDailyTargetLen, 32, 6.0, 1.0, 1.0, 16},
          LevelConfig{2, decomp::kHoursPerWeek, 32, 6.0, 1.0, 1.0, 32},
          LevelConfig{3, decomp::kHorizon, 32, 3.0, 1.0, 0.1, 1}};
}

void GeneratorConfig::validate() const {
  for (std::size_t l = 0; l < kLevels; ++l) {
    levels[l].validate();
    if (levels[l].level != static_cast<int>(l + 1)) throw InvalidInput("levels must be ordered 1, 2, 3");
  }
  for (double w : {aux.bnd, aux.tmp, aux.per, aux.bias, aux.peak, aux.corr})
    if (!(w >= 0.0)) throw InvalidInput("auxiliary weights must be >= 0");
  if (context_dim == 0 || hidden == 0) throw InvalidInput("generator widths must be positive");
  if (time_features == 0 || time_features % 2) throw InvalidInput("time features must be a positive even count");
  if (train_sampling_steps == 0) throw InvalidInput("training Euler steps must be >= 1");
  if (batch == 0) throw InvalidInput("batch size must be >= 1");
  if (!(lr > 0.0)) throw InvalidInput("learning rate must be > 0");
  if (!(lr_final > 0.0 && lr_final <= lr)) throw InvalidInput("final learning rate must be in (0, lr]");
}

std::size_t GeneratorConfig::condition_width(int level) const {
  switch (level) {
    case 1: return context_dim;
    case 2: return context_dim + decomp::kDailyTargetLen;
    case 3: return context_dim + decomp::kDailyTargetLen + decomp::kHoursPerWeek + decomp::kHorizon + kPeakClasses;
    default: throw InvalidInput("level must be 1, 2 or 3");
  }
}

GeneratorModel init_generator(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  GeneratorModel m;
  m.config = config;
  m.params.seed = seed;
  nn::Rng rng(seed);
  for (int l = 1; l <= 3; ++l)
    nn::Dense{"gen.cond" + std::to_string(l), config.context_dim, config.context_dim}.init(m.params, rng);
  nn::Dense{"gen.peak", config.context_dim, kPeakClasses, false}.init(m.params, rng);
  for (int l = 1; l <= 3; ++l) {
    const std::size_t len = config.levels[l - 1].length;
    nn::Mlp{level_name(l), {len + config.time_features + config.condition_width(l), config.hidden, config.hidden, len}}
        .init(m.params, rng);
    if (config.gated_skip) {
      const std::size_t cw = config.condition_width(l);
      m.params.add(level_name(l) + ".skip", Tensor(config.time_features, 1));
      m.params.add(level_name(l) + ".cskip", nn::fan_in_uniform(rng, cw, cw, len));
      m.params.add(level_name(l) + ".cgain", Tensor(config.time_features, 1));
    }
  }
  return m;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<double> time_features(double t, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double a = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k)) * t;
    out[2 * k] = std::sin(a);
    out[2 * k + 1] = std::cos(a);
  }
  return out;
}

namespace graph {

Projected conditions(Binder& bind, const GeneratorConfig& cfg, const Var& context) {
  if (context.cols() != cfg.context_dim) throw InvalidInput("context has the wrong dimension");
  auto proj = [&](int l) { return nn::Dense{"gen.cond" + std::to_string(l), cfg.context_dim, cfg.context_dim}(bind, context); };
  return {proj(1), proj(2), proj(3)};
}

Var peak_logits(Binder& bind, const GeneratorConfig& cfg, const Var& context) {
  return nn::Dense{"gen.peak", cfg.context_dim, kPeakClasses, false}(bind, context);
}

Tensor peak_one_hot(std::span<const std::optional<std::size_t>> h) {
  Tensor out(h.size(), kPeakClasses);
  for (std::size_t r = 0; r < h.size(); ++r) {
    if (!h[r]) continue;
    if (*h[r] >= kPeakClasses) throw InvalidInput("peak hour out of range");
    out(r, *h[r]) = 1.0;
  }
  return out;
}

Var level_condition(const Projected& c, int level, const Var& d, const Var& w, const Var& u, const Var& h_one_hot) {
  auto need = [](const Var& v, const char* what) {
    if (!v.tape()) throw InvalidInput(std::string("missing coarser-level input: ") + what);
  };
  switch (level) {
    case 1: return c.c1;
    case 2: need(d, "d"); return nn::concat_cols({c.c2, d});
    case 3:
      need(d, "d"), need(w, "w"), need(u, "u"), need(h_one_hot, "h*");
      return nn::concat_cols({c.c3, d, w, u, h_one_hot});
    default: throw InvalidInput("level must be 1, 2 or 3");
  }
}

Var velocity(Binder& bind, const GeneratorConfig& cfg, int level, const Var& x, std::span<const double> t,
             const Var& condition) {
  return LevelNet(bind, cfg, level, condition)(x, t);
}

Var flow_loss(Binder& bind, const GeneratorConfig& cfg, int level, const Var& x1, const Var& x0,
              std::span<const double> t, const Var& condition) {
  if (x1.rows() != t.size() || x0.rows() != t.size() || x1.cols() != x0.cols())
    throw InvalidInput("flow_loss: target, noise and time batch shapes disagree");
  Tape& tape = bind.tape();
  Tensor tt(t.size(), 1), one_minus(t.size(), 1);
  for (std::size_t r = 0; r < t.size(); ++r) tt(r, 0) = t[r], one_minus(r, 0) = 1.0 - t[r];
  Var xt = nn::add(nn::mul(tape.constant(tt), x1), nn::mul(tape.constant(one_minus), x0));
  Var v_star = nn::sub(x1, x0);
  return nn::mean(nn::square(nn::sub(velocity(bind, cfg, level, xt, t, condition), v_star)));
}

Var sample(Binder& bind, const GeneratorConfig& cfg, int level, const Var& x0, std::size_t steps,
           const Var& condition) {
  return integrate(LevelNet(bind, cfg, level, condition), x0, steps, level_cfg(cfg, level).clip);
}

Aux auxiliary(const Var& pre, const Var& x_hat, const Var& x_real, const Var& logits,
              std::span<const std::size_t> peak_true) {
  Tape& tape = *pre.tape();
  const std::size_t b = x_hat.rows(), n = x_hat.cols();
  if (n != decomp::kHorizon || x_real.rows() != b || x_real.cols() != n || peak_true.size() != b)
    throw InvalidInput("auxiliary losses: batch shapes disagree");
  Aux a;
  a.bnd = nn::mean(nn::square(nn::relu(nn::negate(pre))));

  auto roughness = [&](const Var& v) {
    return nn::mean_rows(nn::square(nn::sub(nn::slice_cols(v, 1, n - 1), nn::slice_cols(v, 0, n - 1))));
  };
  a.tmp = nn::mean(nn::relu(nn::sub(roughness(x_hat), roughness(x_real))));

  const std::size_t wk = decomp::kHoursPerWeek;
  a.per = nn::mean(nn::square(nn::sub(nn::slice_cols(x_hat, wk, n - wk), nn::slice_cols(x_hat, 0, n - wk))));
  a.bias = nn::mean(nn::square(nn::sub(nn::mean_rows(x_hat), nn::mean_rows(x_real))));

  Tensor pick(b, kPeakClasses);
  for (std::size_t r = 0; r < b; ++r) {
    if (peak_true[r] >= kPeakClasses) throw InvalidInput("peak hour out of range");
    pick(r, peak_true[r]) = 1.0;
  }
  a.peak = nn::scale(nn::sum(nn::mul(tape.constant(pick), nn::log_softmax_rows(logits))), -1.0 / b);

  Var ca = nn::sub(x_hat, nn::mean_rows(x_hat));
  Var cb = nn::sub(x_real, nn::mean_rows(x_real));
  Var cov = nn::mean_rows(nn::mul(ca, cb));
  Var denom = nn::mul(nn::sqrt(nn::add_scalar(nn::mean_rows(nn::square(ca)), 1e-10)),
                      nn::sqrt(nn::add_scalar(nn::mean_rows(nn::square(cb)), 1e-10)));
  a.corr = nn::add_scalar(nn::negate(nn::mean(nn::div(cov, denom))), 1.0);
  return a;
}

}  // namespace graph

Conditions project_conditions(const GeneratorModel& model, std::span<const double> context) {
  check_len(context, model.config.context_dim, "context");
  Tape tape;
  Binder bind(tape, model.params, false);
  auto p = graph::conditions(bind, model.config, tape.constant(Tensor::row({context.begin(), context.end()})));
  return {to_vec(p.c1.value()), to_vec(p.c2.value()), to_vec(p.c3.value())};
}

PeakPrediction peak_head(const GeneratorModel& model, std::span<const double> context) {
  check_len(context, model.config.context_dim, "context");
  PeakPrediction out;
  if (!model.config.peak_head) {
    out.ablated = true;
    return out;
  }
  Tensor logits = nn::matmul(Tensor::row({context.begin(), context.end()}), model.params.at("gen.peak.w"));
  out.q = to_vec(nn::softmax(logits));
  out.h_star = argmax(out.q);
  return out;
}

FlowSample make_flow_sample(std::span<const double> x0, std::span<const double> x1, double t) {
  if (x0.size() != x1.size()) throw InvalidInput("flow sample: x0 and x1 lengths differ");
  FlowSample s{{x0.begin(), x0.end()}, {x1.begin(), x1.end()}, std::vector<double>(x0.size()),
               std::vector<double>(x0.size()), t};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    s.xt[i] = t * x1[i] + (1.0 - t) * x0[i];
    s.v_star[i] = x1[i] - x0[i];
  }
  return s;
}

double flow_matching_loss(const VelocityField& field, const FlowSample& s) {
  const auto v = field(s.xt, s.t);
  check_len(v, s.v_star.size(), "velocity");
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += (v[i] - s.v_star[i]) * (v[i] - s.v_star[i]);
  return acc / static_cast<double>(v.size());
}

namespace {

Var condition_on_tape(Tape& tape, Binder& bind, const GeneratorModel& model, int level, const Conditions& cond,
                      const CoarseInputs& coarse) {
  const auto& cfg = model.config;
  auto row = [&](const std::vector<double>& v, std::size_t len, const char* what) {
    if (v.empty()) return Var{};
    check_len(v, len, what);
    return tape.constant(Tensor::row(v));
  };
  graph::Projected p{row(cond.c1, cfg.context_dim, "c1"), row(cond.c2, cfg.context_dim, "c2"),
                     row(cond.c3, cfg.context_dim, "c3")};
  const std::optional<std::size_t> h = cfg.peak_head ? coarse.h_star : std::nullopt;
  Var one_hot = tape.constant(graph::peak_one_hot(std::span(&h, 1)));
  (void)bind;
  Var c = graph::level_condition(p, level, row(coarse.d, decomp::kDailyTargetLen, "d"),
                                 row(coarse.w, decomp::kHoursPerWeek, "w"), row(coarse.u, decomp::kHorizon, "u"),
                                 one_hot);
  if (!c.tape()) throw InvalidInput("missing condition c" + std::to_string(level));
  return c;
}

}  // namespace

VelocityField level_field(const GeneratorModel& model, int level, const Conditions& cond, const CoarseInputs& coarse) {
  level_cfg(model.config, level);
  return [&model, level, cond, coarse](std::span<const double> x, double t) {
    Tape tape;
    Binder bind(tape, model.params, false);
    Var c = condition_on_tape(tape, bind, model, level, cond, coarse);
    const double ts[1] = {t};
    Var v = graph::velocity(bind, model.config, level, tape.constant(Tensor::row({x.begin(), x.end()})), ts, c);
    return to_vec(v.value());
  };
}

double flow_loss_level(const GeneratorModel& model, int level, const decomp::DecompositionTargets& targets,
                       const Conditions& cond, std::optional<std::size_t> h_star, nn::Rng& rng) {
  const LevelConfig& lc = level_cfg(model.config, level);
  check_len(targets.d_tar, decomp::kDailyTargetLen, "d_tar");
  check_len(targets.w_tar, decomp::kHoursPerWeek, "w_tar");
  check_len(targets.u_tar, decomp::kHorizon, "u_tar");
  check_len(targets.r_tar, decomp::kHorizon, "r_tar");
  const std::vector<double>& x1 = level == 1 ? targets.d_tar : level == 2 ? targets.w_tar : targets.r_tar;
  const double t = rng.uniform();
  Tensor x0 = nn::gaussian_sample(rng, 1, lc.length);
  Tape tape;
  Binder bind(tape, model.params, false);
  CoarseInputs coarse;
  if (level >= 2) coarse.d = targets.d_tar;
  if (level == 3) coarse.w = targets.w_tar, coarse.u = targets.u_tar, coarse.h_star = h_star;
  Var c = condition_on_tape(tape, bind, model, level, cond, coarse);
  const double ts[1] = {t};
  return graph::flow_loss(bind, model.config, level, tape.constant(Tensor::row(x1)), tape.constant(std::move(x0)), ts, c)
      .value()
      .item();
}

Trajectory euler_sample(std::vector<double> x0, const VelocityField& field, std::size_t steps, double clip) {
  if (steps == 0) throw InvalidInput("Euler integration needs at least one step");
  if (!(clip > 0.0)) throw InvalidInput("clip bound must be > 0");
  Trajectory tr;
  tr.states.push_back(x0);
  std::vector<double> x = std::move(x0);
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t k = 1; k <= steps; ++k) {
    const auto v = field(x, static_cast<double>(k) * dt);
    check_len(v, x.size(), "velocity");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i] + v[i] * dt, -clip, clip);
    tr.states.push_back(x);
  }
  return tr;
}

std::vector<double> sample_level(const GeneratorModel& model, int level, const Conditions& cond,
                                 const CoarseInputs& coarse, nn::Rng& rng) {
  const LevelConfig& lc = level_cfg(model.config, level);
  Tape tape;
  Binder bind(tape, model.params, false);
  Var c = condition_on_tape(tape, bind, model, level, cond, coarse);
  Var x0 = tape.constant(nn::gaussian_sample(rng, 1, lc.length, lc.init_noise));
  return to_vec(graph::sample(bind, model.config, level, x0, lc.steps, c).value());
}

GeneratedTraffic generate(const GeneratorModel& model, std::span<const double> context, std::uint64_t seed,
                          const GenerateOptions& opt) {
  if (opt.require_trained && !model.trained) throw StateError("generator is untrained; train or load a checkpoint");
  const GeneratorConfig& cfg = model.config;
  check_len(context, cfg.context_dim, "context");
  Tape tape;
  Binder bind(tape, model.params, false);
  Var c = tape.constant(Tensor::row({context.begin(), context.end()}));
  auto proj = graph::conditions(bind, cfg, c);

  GeneratedTraffic out;
  std::optional<std::size_t> h;
  if (cfg.peak_head) {
    out.q = to_vec(nn::softmax(graph::peak_logits(bind, cfg, c).value()));
    h = argmax(out.q);
  }
  out.h_star = h;
  Var one_hot = tape.constant(graph::peak_one_hot(std::span(&h, 1)));
  Generated g = run_hierarchy(bind, cfg, proj, one_hot, draw_noise(cfg, nn::Rng(seed), 1, true), 0, opt.zero_residual);
  out.d = to_vec(g.d.value());
  out.w = to_vec(g.w.value());
  out.u = to_vec(g.u.value());
  out.r = to_vec(g.r.value());
  out.x = to_vec(g.x.value());
  return out;
}

AuxLosses auxiliary_losses(const GeneratedTraffic& g, std::span<const double> x_real, std::span<const double> q,
                           std::size_t h_true) {
  const std::size_t n = decomp::kHorizon;
  check_len(g.x, n, "generated x");
  check_len(g.u, n, "generated u");
  check_len(g.r, n, "generated r");
  check_len(x_real, n, "real x");
  check_len(q, kPeakClasses, "q");
  if (h_true >= kPeakClasses) throw InvalidInput("peak hour out of range");
  AuxLosses a;
  double rough_g = 0.0, rough_r = 0.0, mg = 0.0, mr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double neg = std::max(-(g.u[i] + g.r[i]), 0.0);
    a.bnd += neg * neg;
    if (i > 0) {
      rough_g += (g.x[i] - g.x[i - 1]) * (g.x[i] - g.x[i - 1]);
      rough_r += (x_real[i] - x_real[i - 1]) * (x_real[i] - x_real[i - 1]);
    }
    if (i >= decomp::kHoursPerWeek) {
      const double d = g.x[i] - g.x[i - decomp::kHoursPerWeek];
      a.per += d * d;
    }
    mg += g.x[i];
    mr += x_real[i];
  }
  a.bnd /= n;
  a.tmp = std::max(rough_g / (n - 1) - rough_r / (n - 1), 0.0);
  a.per /= static_cast<double>(n - decomp::kHoursPerWeek);
  mg /= n;
  mr /= n;
  a.bias = (mg - mr) * (mg - mr);
  a.peak = -std::log(q[h_true]);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (g.x[i] - mg) * (x_real[i] - mr);
    va += (g.x[i] - mg) * (g.x[i] - mg);
    vb += (x_real[i] - mr) * (x_real[i] - mr);
  }
  a.corr = 1.0 - (cov / n) / (std::sqrt(va / n + 1e-10) * std::sqrt(vb / n + 1e-10));
  return a;
}

LossBreakdown evaluate_objective(const GeneratorModel& model, std::span<const GeneratorExample> batch,
                                 std::uint64_t seed) {
  if (batch.empty()) throw InvalidInput("evaluate_objective: empty batch");
  const auto prepared = prepare(model.config, batch);
  std::vector<const Prepared*> rows;
  for (const auto& p : prepared) rows.push_back(&p);
  Tape tape;
  Binder bind(tape, model.params, false);
  return batch_objective(bind, model.config, rows, nn::Rng(seed)).values;
}

GeneratorTrainResult train_generator(GeneratorModel& model, std::span<const GeneratorExample> corpus,
                                     std::size_t epochs, std::uint64_t seed,
                                     const std::function<void(std::size_t, const LossBreakdown&)>& progress) {
  if (corpus.empty()) throw InvalidInput("train_generator: empty corpus");
  const GeneratorConfig& cfg = model.config;
  cfg.validate();
  const auto prepared = prepare(cfg, corpus);
  nn::Adam adam(nn::AdamConfig{cfg.lr});
  const nn::Rng root(seed);
  GeneratorTrainResult result;

  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    // Cosine decay from lr to lr_final over this call's epochs.
    const double phase = epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(epochs - 1) : 0.0;
    const double lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * phase));
    nn::Rng erng = root.split(epoch + 1);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[erng.below(i)]);
    LossBreakdown mean;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<const Prepared*> rows;
      for (std::size_t j = start; j < end; ++j) rows.push_back(&prepared[order[j]]);
      Tape tape;
      Binder bind(tape, model.params, true);
      auto obj = batch_objective(bind, cfg, rows, erng.split(batch_index + 1));
      adam.step(model.params, nn::backward(obj.total, bind), lr);
      accumulate(mean, obj.values, static_cast<double>(end - start) / static_cast<double>(order.size()));
    }
    result.epochs.push_back(mean);
    if (progress) progress(epoch, mean);
  }
  model.trained = true;
  model.epochs += epochs;
  model.train_seed = seed;
  return result;
}

}  // namespace cellflow::gen
