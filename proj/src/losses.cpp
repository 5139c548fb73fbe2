#include "airwayseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "airwayseg/error.hpp"

namespace airwayseg::losses {
namespace {

void require_pair(const ProbVolume& y, const ProbVolume& p) {
  require_aligned(y.dims(), y.spacing(), p.dims(), p.spacing(), "loss inputs");
  if (y.num_classes() != p.num_classes()) {
    throw ShapeError("loss inputs: target has " + std::to_string(y.num_classes()) + " channels, prediction has " +
                     std::to_string(p.num_classes()));
  }
}

std::vector<std::size_t> reduced_channels(std::size_t num_classes, const LossOptions& opts) {
  std::vector<std::size_t> channels;
  const std::size_t first = (num_classes > 1 && !opts.include_background) ? 1 : 0;
  for (std::size_t c = first; c < num_classes; ++c) channels.push_back(c);
  return channels;
}

double clamp_prob(double p) { return std::clamp(p, kClamp, 1.0 - kClamp); }

double ce_term(double y, double p) {
  const double pc = clamp_prob(p);
  return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

double ce_term_derivative(double y, double p) {
  const double pc = clamp_prob(p);
  return -(y / pc - (1.0 - y) / (1.0 - pc));
}

// Shared by plain and top-k cross-entropy so k = 1 reproduces CE bit for bit.
// `selected` may be null (all voxels) or a per-entry 0/1 vector.
LossValue masked_cross_entropy(const ProbVolume& y, const ProbVolume& p, bool want_gradient, const LossOptions& opts,
                               const std::vector<std::uint8_t>* selected, const std::vector<double>* normalizers) {
  const std::size_t n = p.voxel_count();
  LossValue out;
  out.channels = reduced_channels(p.num_classes(), opts);
  const auto yv = y.values();
  const auto pv = p.values();
  const double m = static_cast<double>(out.channels.size());
  if (want_gradient) out.gradient.emplace(pv.size(), 0.0);

  double channel_sum = 0.0;
  for (std::size_t c : out.channels) {
    const std::size_t base = c * n;
    const double norm = normalizers ? (*normalizers)[c] : static_cast<double>(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (selected && !(*selected)[base + i]) continue;
      sum += ce_term(yv[base + i], pv[base + i]);
    }
    channel_sum += sum / norm;
    if (want_gradient) {
      auto& g = *out.gradient;
      for (std::size_t i = 0; i < n; ++i) {
        if (selected && !(*selected)[base + i]) continue;
        g[base + i] = ce_term_derivative(yv[base + i], pv[base + i]) / norm / m;
      }
    }
  }
  out.value = channel_sum / m;
  return out;
}

std::size_t selection_count(double k_fraction, std::size_t n) {
  // Small slack so k * N that lands a hair above an integer does not round up.
  const double raw = std::ceil(k_fraction * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n);
}

}  // namespace

double alpha_schedule(const ScheduleState& s) {
  if (s.total_epochs == 0) throw Error("alpha schedule: total_epochs must be positive");
  if (s.epoch > s.total_epochs) {
    throw Error("alpha schedule: epoch " + std::to_string(s.epoch) + " exceeds total " + std::to_string(s.total_epochs));
  }
  return static_cast<double>(s.epoch) / static_cast<double>(s.total_epochs);
}

LossValue cross_entropy(const ProbVolume& y, const ProbVolume& p, bool want_gradient, const LossOptions& opts) {
  require_pair(y, p);
  return masked_cross_entropy(y, p, want_gradient, opts, nullptr, nullptr);
}

LossValue soft_dice(const ProbVolume& y, const ProbVolume& p, bool want_gradient, const LossOptions& opts) {
  require_pair(y, p);
  const std::size_t n = p.voxel_count();
  const auto yv = y.values();
  const auto pv = p.values();

  struct ChannelSums {
    std::size_t channel;
    double intersection;
    double denominator;
  };
  std::vector<ChannelSums> kept;
  LossValue out;
  for (std::size_t c : reduced_channels(p.num_classes(), opts)) {
    double inter = 0.0, sy = 0.0, sp = 0.0;
    for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
      inter += yv[i] * pv[i];
      sy += yv[i];
      sp += pv[i];
    }
    const double den = sy + sp;
    if (den == 0.0) {
      out.empty_channels.push_back(c);
    } else {
      kept.push_back({c, inter, den});
      out.channels.push_back(c);
    }
  }
  if (kept.empty()) throw UndefinedError("undefined Dice: every channel is empty in both target and prediction");

  const double m = static_cast<double>(kept.size());
  double total = 0.0;
  for (const auto& k : kept) total += 2.0 * k.intersection / k.denominator;
  out.value = total / m;

  if (want_gradient) {
    out.gradient.emplace(pv.size(), 0.0);
    auto& g = *out.gradient;
    for (const auto& k : kept) {
      const double den2 = k.denominator * k.denominator;
      for (std::size_t i = k.channel * n; i < (k.channel + 1) * n; ++i) {
        g[i] = 2.0 * (yv[i] * k.denominator - k.intersection) / den2 / m;
      }
    }
  }
  return out;
}

LossValue dice_ce_loss(const ProbVolume& y, const ProbVolume& p, bool want_gradient, const LossOptions& opts) {
  const LossValue ce = cross_entropy(y, p, want_gradient, opts);
  const LossValue dice = soft_dice(y, p, want_gradient, opts);
  const bool raw = opts.dice_term == DiceTerm::RawDice;
  LossValue out;
  out.value = ce.value + (raw ? dice.value : 1.0 - dice.value);
  out.channels = ce.channels;
  out.empty_channels = dice.empty_channels;
  if (want_gradient) {
    out.gradient = *ce.gradient;
    const auto& gd = *dice.gradient;
    auto& g = *out.gradient;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += raw ? gd[i] : -gd[i];
  }
  return out;
}

LossValue top_k_cross_entropy(const ProbVolume& y, const ProbVolume& p, double k_fraction, bool want_gradient,
                              const LossOptions& opts) {
  require_pair(y, p);
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) {
    throw Error("top-k fraction must lie in (0, 1], got " + std::to_string(k_fraction));
  }
  const std::size_t n = p.voxel_count();
  const std::size_t count = selection_count(k_fraction, n);
  const auto yv = y.values();
  const auto pv = p.values();

  std::vector<std::uint8_t> selected(pv.size(), 0);
  std::vector<double> normalizers(p.num_classes(), static_cast<double>(n));
  std::vector<double> terms(n);
  std::vector<std::size_t> order(n);
  for (std::size_t c : reduced_channels(p.num_classes(), opts)) {
    const std::size_t base = c * n;
    for (std::size_t i = 0; i < n; ++i) terms[i] = ce_term(yv[base + i], pv[base + i]);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto harder = [&](std::size_t a, std::size_t b) { return terms[a] > terms[b] || (terms[a] == terms[b] && a < b); };
    if (count < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(), harder);
    for (std::size_t r = 0; r < count; ++r) selected[base + order[r]] = 1;
    if (opts.topk_normalization == TopKNormalization::BySelectedCount) normalizers[c] = static_cast<double>(count);
  }
  LossValue out = masked_cross_entropy(y, p, want_gradient, opts, &selected, &normalizers);
  out.selected = std::move(selected);
  return out;
}

LossValue wdice_top50(const ProbVolume& y, const ProbVolume& p, double alpha, bool want_gradient,
                      const LossOptions& opts, double k_fraction) {
  require_pair(y, p);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1], got " + std::to_string(alpha));
  const bool raw = opts.dice_term == DiceTerm::RawDice;

  LossValue out;
  out.channels = reduced_channels(p.num_classes(), opts);
  if (want_gradient) out.gradient.emplace(p.values().size(), 0.0);

  // Endpoints skip the unused term entirely, so alpha = 0 and alpha = 1 reproduce
  // the constituents exactly.
  double dice_part = 0.0;
  double top_part = 0.0;
  if (alpha < 1.0) {
    const LossValue dice = soft_dice(y, p, want_gradient, opts);
    dice_part = raw ? dice.value : 1.0 - dice.value;
    out.empty_channels = dice.empty_channels;
    if (want_gradient) {
      const auto& gd = *dice.gradient;
      auto& g = *out.gradient;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += (1.0 - alpha) * (raw ? gd[i] : -gd[i]);
    }
  }
  if (alpha > 0.0) {
    LossValue top = top_k_cross_entropy(y, p, k_fraction, want_gradient, opts);
    top_part = top.value;
    out.selected = std::move(top.selected);
    if (want_gradient) {
      const auto& gt = *top.gradient;
      auto& g = *out.gradient;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha * gt[i];
    }
  }
  if (alpha == 0.0) {
    out.value = dice_part;
  } else if (alpha == 1.0) {
    out.value = top_part;
  } else {
    out.value = (1.0 - alpha) * dice_part + alpha * top_part;
  }
  return out;
}

std::string describe(const LossSpec& spec) {
  std::ostringstream os;
  switch (spec.id) {
    case LossId::CrossEntropy: return "CE";
    case LossId::SoftDice: return "SoftDice";
    case LossId::DiceCE: return "DiceCE";
    case LossId::TopK:
      os << "Top" << spec.k_fraction * 100.0 << "CE";
      return os.str();
    case LossId::WDiceTop50:
      os << "WDiceTop50(alpha=" << spec.alpha << ")";
      return os.str();
  }
  return "unknown";
}

LossValue evaluate(const LossSpec& spec, const ProbVolume& y, const ProbVolume& p, bool want_gradient) {
  switch (spec.id) {
    case LossId::CrossEntropy: return cross_entropy(y, p, want_gradient, spec.options);
    case LossId::SoftDice: return soft_dice(y, p, want_gradient, spec.options);
    case LossId::DiceCE: return dice_ce_loss(y, p, want_gradient, spec.options);
    case LossId::TopK: return top_k_cross_entropy(y, p, spec.k_fraction, want_gradient, spec.options);
    case LossId::WDiceTop50: return wdice_top50(y, p, spec.alpha, want_gradient, spec.options, spec.k_fraction);
  }
  throw Error("unknown loss id");
}

namespace {

template <class Eval>
FiniteDifference central_differences(const ProbVolume& p, double h, Eval&& eval) {
  if (!(h >= 1e-8 && h <= 1e-3)) throw Error("finite-difference step must lie in [1e-8, 1e-3]");
  const auto base = p.values();
  FiniteDifference fd;
  fd.gradient.assign(base.size(), 0.0);
  fd.selection_tie.assign(base.size(), 0);
  fd.clamp_kink.assign(base.size(), 0);
  std::vector<double> work(base.begin(), base.end());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double hi = std::min(1.0, base[i] + h);
    const double lo = std::max(0.0, base[i] - h);
    if (hi != base[i] + h || lo != base[i] - h) ++fd.clamped_entries;
    if (lo < kClamp || hi > 1.0 - kClamp) fd.clamp_kink[i] = 1;
    work[i] = hi;
    const auto [f_hi, tie_hi] = eval(ProbVolume(p.dims(), p.spacing(), p.num_classes(), work));
    work[i] = lo;
    const auto [f_lo, tie_lo] = eval(ProbVolume(p.dims(), p.spacing(), p.num_classes(), work));
    work[i] = base[i];
    fd.gradient[i] = (f_hi - f_lo) / (hi - lo);
    fd.selection_tie[i] = (tie_hi || tie_lo) ? 1 : 0;
  }
  return fd;
}

}  // namespace

FiniteDifference finite_difference_gradient(const std::function<double(const ProbVolume&)>& loss,
                                            const ProbVolume& p, double h) {
  return central_differences(p, h, [&](const ProbVolume& q) { return std::pair{loss(q), false}; });
}

FiniteDifference finite_difference_gradient(const LossSpec& spec, const ProbVolume& y, const ProbVolume& p,
                                            double h) {
  const std::vector<std::uint8_t> reference = evaluate(spec, y, p, false).selected;
  return central_differences(p, h, [&](const ProbVolume& q) {
    const LossValue v = evaluate(spec, y, q, false);
    return std::pair{v.value, v.selected != reference};
  });
}

GradientCheck compare_gradients(const std::vector<double>& analytic, const FiniteDifference& fd,
                                double relative_tolerance, double absolute_tolerance, double small_entry) {
  if (analytic.size() != fd.gradient.size()) throw ShapeError("gradient sizes differ");
  GradientCheck check;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (fd.selection_tie[i]) {
      ++check.skipped_ties;
      continue;
    }
    if (fd.clamp_kink[i]) {
      ++check.skipped_kinks;
      continue;
    }
    const double a = analytic[i];
    const double f = fd.gradient[i];
    const double diff = std::abs(a - f);
    ++check.compared;
    if (std::abs(a) < small_entry) {
      check.max_small_entry_error = std::max(check.max_small_entry_error, diff);
    } else {
      check.max_relative_error = std::max(check.max_relative_error, diff / std::max(std::abs(a), std::abs(f)));
    }
  }
  check.passed = check.max_relative_error < relative_tolerance && check.max_small_entry_error < absolute_tolerance;
  return check;
}

}  // namespace airwayseg::losses
