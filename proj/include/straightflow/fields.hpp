#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "straightflow/manifold.hpp"

namespace straightflow {

/// k unit normal fields sampled on a manifold. `fields[i][0]` is the active
/// field for the straightening pipeline; later entries are passenger fields
/// that ride along through pointwise rotations of the active one.
struct NormalFrame {
  std::vector<std::vector<Vec>> fields;  // [sample][field]
  bool perpendicular = false;

  int sample_count() const { return static_cast<int>(fields.size()); }
  int k() const { return fields.empty() ? 0 : static_cast<int>(fields[0].size()); }

  const Vec& active(int i) const { return fields[i][0]; }
  Vec& active(int i) { return fields[i][0]; }

  static NormalFrame single(std::vector<Vec> field);
};

/// Unit length within unit_tol and smallest singular value of
/// [tangent basis | fields] above independence_tol at every sample.
/// Throws DependentField otherwise.
void validate_normal_frame(const EmbeddedManifold& M, const TangentFrame& T,
                           const NormalFrame& F, double unit_tol,
                           double independence_tol);

/// Max |field . tangent| over samples/directions for the active field.
double max_tangential_component(const TangentFrame& T, const NormalFrame& F);

struct GroundingReport {
  double epsilon = 0.0;  // min over samples of angle(alpha, -u)
  int argmin = -1;
};

/// Replace every field by its component normal to the tangent space,
/// renormalised. Passenger fields are rotated by the same per-sample rotation
/// that carries the active field (so mutual angles survive where possible).
/// Throws DependentField when a rejection degenerates or independence fails.
NormalFrame perpendicularize(const EmbeddedManifold& M, const TangentFrame& T,
                             const NormalFrame& F, double independence_tol);

/// epsilon-groundedness of the active field: min angle with straight down.
GroundingReport measure_grounding(const EmbeddedManifold& M, const NormalFrame& F);

/// Rotate the active field toward vertical inside span(alpha, u): full amount
/// pi/2 - mu, smoothly clamped so the result never passes the vertical.
/// Requires 0 < mu < grounding epsilon. Throws NotGrounded.
NormalFrame upwards_rotate(const EmbeddedManifold& M, const NormalFrame& F,
                           double mu, double smoothing);

/// Tangential projection of the vertical unit at every sample.
std::vector<Vec> gradient_field(const EmbeddedManifold& M, const TangentFrame& T);

/// Samples whose tangent space contains the vertical direction within
/// `angle_tol` radians.
std::vector<int> horizontal_set(const EmbeddedManifold& M, const TangentFrame& T,
                                double angle_tol);

/// Upmost unit perpendicular vector per sample: the unit normal maximising
/// the vertical component. Empty where the vertical is tangent (near the
/// horizontal set).
std::vector<std::optional<Vec>> upmost_field(const EmbeddedManifold& M,
                                             const TangentFrame& T);

/// Per-sample subset labels used by the localisation pipeline.
struct SubsetMarking {
  static constexpr std::uint8_t H = 1;       // vertical lies in the tangent space
  static constexpr std::uint8_t D = 2;       // active field equals the downmost normal
  static constexpr std::uint8_t UPrime = 4;  // inner neighbourhood of H
  static constexpr std::uint8_t U = 8;       // outer neighbourhood of H
  static constexpr std::uint8_t V = 16;      // neighbourhood of the downset away from U'

  std::vector<std::uint8_t> marks;

  bool has(int i, std::uint8_t bit) const { return marks[i] & bit; }
  void add(int i, std::uint8_t bit) { marks[i] |= bit; }
  std::vector<int> with(std::uint8_t bit) const;
  int count(std::uint8_t bit) const;

  /// Containment rules: U' subset of U, H subset of U', D outside U covered
  /// by V. Throws std::logic_error on violation.
  void validate() const;
};

struct MarkingConfig {
  double h_tol = 0.05;      // radians: tangent-contains-vertical threshold
  double d_tol = 0.05;      // radians: downset threshold angle(alpha, -psi)
  int u_prime_cells = 2;    // graph dilation of H for U'
  int u_cells = 4;          // graph dilation of H for U
  int v_cells = 2;          // graph dilation of the downset core for V
};

/// Derive H, U', U, D, V for the active field. D detection skips samples in
/// U' (the downset closure's frontier belongs to H's neighbourhood).
SubsetMarking mark_subsets(const EmbeddedManifold& M, const TangentFrame& T,
                           const NormalFrame& F, const MarkingConfig& cfg);

/// Isotope the active field to the upmost field outside W = U union V:
/// bitwise the upmost field outside W, untouched deep inside, great-circle
/// interpolation across a `collar_cells`-sample collar just inside the
/// boundary of W. Throws AntipodalCollar when a collar sample's field is
/// antipodal to the upmost vector within antipodal_tol.
NormalFrame localise(const EmbeddedManifold& M, const TangentFrame& T,
                     const NormalFrame& F, const SubsetMarking& marking,
                     int collar_cells, double antipodal_tol);

/// Apply to v the rotation taking unit `from` to unit `to` inside their
/// common plane, identity on the orthogonal complement. Used to transport
/// passenger fields alongside a rotated or flowed active field. Throws
/// DependentField when from and to are antipodal.
Vec transport_by_rotation(const Vec& from, const Vec& to, const Vec& v);

struct PerturbResult {
  NormalFrame frame;
  SubsetMarking marking;        // re-derived for the returned frame
  int rounds = 0;               // 0 = accepted as-is, bitwise-equal frame
  double max_component_length = 0.0;
};

/// Accept or repair general position: every component of a gradient-field
/// integral curve inside V must have discrete length < delta. Repairs apply
/// seeded random rotations (magnitude <= perturb_angle) to the active field
/// inside the normal space near the downset, then re-derive the marking.
/// Throws GeneralPositionFailed after max_rounds.
PerturbResult perturb_general_position(const EmbeddedManifold& M,
                                       const TangentFrame& T, const NormalFrame& F,
                                       const MarkingConfig& cfg, double delta,
                                       double perturb_angle, std::uint64_t seed,
                                       int max_rounds);

/// Discrete integral-curve components of the gradient field inside V; returns
/// each component's arc length. Exposed for tests.
std::vector<double> gradient_components_in_V(const EmbeddedManifold& M,
                                             const TangentFrame& T,
                                             const SubsetMarking& marking);

/// Ambient extension of a field: equals the sample field on M, rotates toward
/// the vertical along radial distance inside the tubular neighbourhood, and is
/// exactly vertical at distance >= nu from every sample. Owns snapshots of the
/// construction data, so the source manifold may move afterwards.
class AmbientField {
 public:
  AmbientField(const EmbeddedManifold& M, const NormalFrame& beta,
               const TubularNeighbourhood& N, double ambiguous_tol = 0.0);

  /// Nearest-foot evaluation over all samples (embedded owners).
  Vec eval(const Vec& x) const;

  /// Evaluation inside the induced patch around sample `anchor`: the foot
  /// search is restricted to samples within intrinsic distance lambda of the
  /// anchor (immersed owners).
  Vec eval_anchored(const Vec& x, int anchor) const;

  const Vec& vertical() const { return u_; }
  double nu() const { return nu_; }

  /// Vertical coordinate above which the field is exactly vertical: the top
  /// of the active-sample box (max active foot height + nu), -inf when no
  /// sample differs from vertical. Flow integrators use it to retire samples.
  double freeze_height() const { return freeze_height_; }
  bool anchored_ready() const { return !balls_.empty(); }
  int sample_count() const { return static_cast<int>(feet_.size()); }
  const Vec& field_at_sample(int i) const { return beta_[i]; }

  /// Precompute anchor candidate lists (intrinsic lambda-balls).
  void prepare_anchors(const EmbeddedManifold& M);

 private:
  Vec eval_candidates(const Vec& x, const std::vector<int>& candidates,
                      bool check_ambiguity) const;

  std::vector<Vec> feet_;    // sample positions at construction time
  std::vector<Vec> beta_;    // active field at construction time
  std::vector<int> active_;  // samples where beta differs from u
  std::vector<int> all_ids_;
  std::vector<std::vector<int>> balls_;  // anchor candidate lists
  std::shared_ptr<EmbeddedManifold> owner_skeleton_;  // ambiguity gate data
  Vec u_;
  Vec active_lo_, active_hi_;  // active-sample box inflated by nu
  double nu_ = 0.0;
  double lambda_ = 0.0;
  double ambiguous_tol_ = 0.0;
  double freeze_height_ = -kInf;
  bool any_active_ = false;
};

/// Build the ambient field (checks nu > 0; callers enforce nu <= reach for
/// embedded owners).
AmbientField globalize(const EmbeddedManifold& M, const NormalFrame& beta,
                       const TubularNeighbourhood& N, double ambiguous_tol = 0.0);

}  // namespace straightflow
