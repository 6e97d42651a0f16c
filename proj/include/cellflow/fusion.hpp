#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cellflow/nn/autodiff.hpp"
#include "cellflow/nn/layers.hpp"

namespace cellflow::fusion {

/// Address-prompt and surrounding-context embeddings of one POI (both D-dim).
struct PoiRecord {
  std::vector<double> address;
  std::vector<double> context;
};

/// POIs within the query radius. May be empty.
struct PoiSet {
  std::vector<PoiRecord> records;
  double radius_m = 0.0;
};

/// Precomputed encoder outputs for one location.
struct LocationInput {
  std::string site_id;
  std::optional<std::vector<double>> visual;  // d-dim, unit norm
  PoiSet pois;
};

/// Unit-norm fused location embedding plus which modalities produced it.
struct SpatialContext {
  std::vector<double> c;
  bool has_visual = false;
  bool has_poi = false;
};

struct FusionConfig {
  std::size_t dim = 32;       // shared space d
  std::size_t poi_dim = 64;   // POI text embedding D
  std::size_t score_hidden = 32;
  std::size_t pool_hidden = 32;
  std::size_t ffn = 64;
  double mask_prob = 0.5;     // P(m_I = 1) when both modalities are present
  std::size_t batch = 16;
  double lr = 1e-3;
};

struct FusionModel {
  FusionConfig config;
  nn::ParameterSet params;
  bool trained = false;
  std::size_t epochs = 0;
  std::uint64_t train_seed = 0;
};

FusionModel init_fusion(const FusionConfig& config, std::uint64_t seed);

struct PoiPair {
  std::vector<double> projected;  // p_i, unit norm, d-dim
  std::array<double, 2> alpha{};  // [alpha_A, alpha_S]
};
PoiPair fuse_poi_pair(const FusionModel& model, const PoiRecord& rec);

struct PooledPoi {
  std::vector<double> p;
  std::vector<double> beta;
};
/// Attention pooling of projected POIs; std::nullopt when K = 0 (modality missing).
std::optional<PooledPoi> pool_pois(const FusionModel& model, std::span<const std::vector<double>> projected);

struct MaskedInputs {
  std::vector<double> v;
  std::vector<double> p;
};
/// Mask-token substitution. In training mode exactly one of m_visual, m_poi must be 1.
MaskedInputs apply_mask(const FusionModel& model, std::span<const double> v, std::span<const double> p,
                        int m_visual, int m_poi, bool training);

struct FusedState {
  std::vector<double> c;    // unit norm
  std::vector<double> h_v;
  std::vector<double> h_p;
  nn::Tensor attention;     // 3 x 3 over [fusion token, visual, poi]
};
FusedState fuse_forward(const FusionModel& model, std::span<const double> v_tilde,
                        std::span<const double> p_tilde);

/// m_I (1 - v_hat . v) + m_P (1 - p_hat . p) with unit-normalised linear reconstructions.
double reconstruction_loss(const FusionModel& model, std::span<const double> h_v, std::span<const double> h_p,
                           std::span<const double> v, std::span<const double> p, int m_visual, int m_poi);

/// Inference: missing POIs set m_P = 1, missing imagery sets m_I = 1, otherwise no masking.
SpatialContext embed_location(const FusionModel& model, const std::optional<std::vector<double>>& visual,
                              const PoiSet& pois);
inline SpatialContext embed_location(const FusionModel& model, const LocationInput& in) {
  return embed_location(model, in.visual, in.pois);
}

struct FusionTrainResult {
  std::vector<double> loss_curve;  // [0] before training, then one entry per epoch
};

/// Masked-reconstruction training. Deterministic given the seed.
FusionTrainResult train_fusion(FusionModel& model, std::span<const LocationInput> corpus, std::size_t epochs,
                               std::uint64_t seed);

/// Deterministic evaluation loss: mean over sites of the visual-masked term
/// (sites with imagery and POIs) and the POI-masked term (same sites).
double evaluation_loss(const FusionModel& model, std::span<const LocationInput> sites);

struct ReconstructionScore {
  double visual_cosine = 0.0;
  double poi_cosine = 0.0;
  std::size_t sites = 0;
};
ReconstructionScore reconstruction_cosine(const FusionModel& model, std::span<const LocationInput> sites);

/// Graph-level building blocks, shared by training and the gradient checks.
namespace graph {

struct Fused {
  nn::Var c;
  nn::Var h_v;
  nn::Var h_p;
  nn::Var attention;
};

/// K x d projected, normalised POI embeddings. alpha_out (K x 2) is optional.
nn::Var project_pois(nn::Binder& bind, const FusionConfig& cfg, const PoiSet& pois, nn::Var* alpha_out = nullptr);
nn::Var pool(nn::Binder& bind, const FusionConfig& cfg, const nn::Var& projected, nn::Var* beta_out = nullptr);
nn::Var mask(nn::Binder& bind, const nn::Var& x, const std::string& token, int m);
Fused fuse(nn::Binder& bind, const FusionConfig& cfg, const nn::Var& v_tilde, const nn::Var& p_tilde);
nn::Var reconstruction_loss(nn::Binder& bind, const FusionConfig& cfg, const Fused& f, const nn::Var& v,
                            const nn::Var& p, int m_visual, int m_poi);
/// Full per-site objective; reconstruction targets are held constant.
nn::Var site_loss(nn::Binder& bind, const FusionConfig& cfg, const LocationInput& site, int m_visual, int m_poi);

}  // namespace graph

}  // namespace cellflow::fusion
