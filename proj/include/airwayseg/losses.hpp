#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "airwayseg/volgrid.hpp"

namespace airwayseg::losses {

/// Probabilities are clamped to [kClamp, 1 - kClamp] before any logarithm.
inline constexpr double kClamp = 1e-7;
inline constexpr double kTop50Fraction = 0.5;

/// How the Dice coefficient enters a composite loss.
enum class DiceTerm {
  OneMinusDice,  // CE + (1 - Dice); the default
  RawDice,       // CE + Dice, the literal reading
};

/// Normaliser of the top-k cross-entropy sum.
enum class TopKNormalization {
  ByVoxelCount,     // divide by N, the default
  BySelectedCount,  // divide by the number of selected voxels
};

struct LossOptions {
  bool include_background = false;
  DiceTerm dice_term = DiceTerm::OneMinusDice;
  TopKNormalization topk_normalization = TopKNormalization::ByVoxelCount;
};

/// Loss value and, when requested, d(loss)/dp laid out exactly like the
/// probability volume (channel-major).
struct LossValue {
  double value = 0.0;
  std::optional<std::vector<double>> gradient;
  /// Channels that entered the channel mean.
  std::vector<std::size_t> channels;
  /// Dice only: channels skipped because both sums were zero.
  std::vector<std::size_t> empty_channels;
  /// Top-k only: 1 where the voxel/channel entry was selected.
  std::vector<std::uint8_t> selected;
};

struct ScheduleState {
  unsigned epoch = 0;
  unsigned total_epochs = 1;
};

/// epoch / total_epochs.
double alpha_schedule(const ScheduleState& s);

LossValue cross_entropy(const ProbVolume& y, const ProbVolume& p, bool want_gradient, const LossOptions& opts = {});

/// value is the Dice coefficient itself (higher is better), not a loss.
LossValue soft_dice(const ProbVolume& y, const ProbVolume& p, bool want_gradient, const LossOptions& opts = {});

LossValue dice_ce_loss(const ProbVolume& y, const ProbVolume& p, bool want_gradient, const LossOptions& opts = {});

/// Cross-entropy over the ceil(k_fraction * N) hardest voxels of each channel.
/// Ties at the threshold go to the smaller linear index.
LossValue top_k_cross_entropy(const ProbVolume& y, const ProbVolume& p, double k_fraction, bool want_gradient,
                              const LossOptions& opts = {});

/// (1 - alpha) * dice term + alpha * top-k cross-entropy.
LossValue wdice_top50(const ProbVolume& y, const ProbVolume& p, double alpha, bool want_gradient,
                      const LossOptions& opts = {}, double k_fraction = kTop50Fraction);

enum class LossId { CrossEntropy, SoftDice, DiceCE, TopK, WDiceTop50 };

struct LossSpec {
  LossId id = LossId::CrossEntropy;
  double alpha = 0.0;
  double k_fraction = kTop50Fraction;
  LossOptions options;
};

std::string describe(const LossSpec& spec);
LossValue evaluate(const LossSpec& spec, const ProbVolume& y, const ProbVolume& p, bool want_gradient);

struct FiniteDifference {
  std::vector<double> gradient;
  /// Entries whose perturbation changed the top-k selection (non-smooth point).
  std::vector<std::uint8_t> selection_tie;
  /// Entries whose stencil crosses a clamp bound of the logarithm, where the
  /// loss has a kink.
  std::vector<std::uint8_t> clamp_kink;
  /// Entries where p +/- h left [0,1] and was clamped.
  std::size_t clamped_entries = 0;
};

/// Central differences of an arbitrary scalar function of p.
FiniteDifference finite_difference_gradient(const std::function<double(const ProbVolume&)>& loss,
                                            const ProbVolume& p, double h);

/// Central differences of a toolkit loss, with top-k selection changes flagged.
FiniteDifference finite_difference_gradient(const LossSpec& spec, const ProbVolume& y, const ProbVolume& p, double h);

struct GradientCheck {
  double max_relative_error = 0.0;
  double max_small_entry_error = 0.0;
  std::size_t compared = 0;
  std::size_t skipped_ties = 0;
  std::size_t skipped_kinks = 0;
  bool passed = true;
};

/// Relative error max|a - f| / max(|a|, |f|) for entries with |a| >= small_entry,
/// absolute error otherwise; tie and kink entries are skipped.
GradientCheck compare_gradients(const std::vector<double>& analytic, const FiniteDifference& fd,
                                double relative_tolerance = 1e-4, double absolute_tolerance = 1e-6,
                                double small_entry = 1e-3);

}  // namespace airwayseg::losses
