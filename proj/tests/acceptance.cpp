// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "families.hpp"
#include "lrq/intpipe.hpp"
#include "lrq/pipeline.hpp"
#include "lrq/rotation.hpp"
#include "lrq/tensorio.hpp"
#include "lrq/twinlog.hpp"
#include "lrq/uniquant.hpp"
#include "oracle.hpp"

using namespace lrq;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double frob_diff(const Matrix<double>& a, const Matrix<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(static_cast<long double>(a.flat()[i]) - b.flat()[i], 2);
  return static_cast<double>(std::sqrt(s));
}

double l2(const Matrix<float>& a, const Matrix<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(double(a.flat()[i]) - b.flat()[i], 2);
  return std::sqrt(s);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome twinlog_beats_uniform() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const WeightMatrix w = gen_gaussian_longtail({128, 128, 0.02, 0.01, 8.0, seed});
    const double e_tlq = l2(tlq_dequantize(tlq_quantize_matrix(w, 3, ClipGrid::default_grid())), w);
    const double e_uni = l2(dequantize_rows(per_channel_quantize(w, 3)), w);
    wins += e_tlq < e_uni;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {wins >= 48 && secs < 60.0, fmt("%.0f/50 wins (need 48), %.1f s", wins, secs)};
}

Outcome twinlog_exactness() {
  std::mt19937_64 rng(2);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const auto c = family::exact_channel(rng);
    exact += tlq_dequantize_channel(tlq_quantize_channel(c.w, c.bits, 1.0f, 1.0f)) == c.w;
  }
  return {exact == 100, fmt("%.0f/100 channels bit-exact", exact)};
}

Outcome clip_search_equivalence() {
  std::mt19937_64 rng(3);
  const ClipGrid grid = ClipGrid::default_grid();
  int match = 0;
  for (int i = 0; i < 20; ++i) {
    std::vector<float> w;
    if (i % 2 == 0) {
      w = family::spiked_channel(rng);
    } else {
      const auto m = oracle::gaussian(1, 64, 0.02, rng);
      w.assign(m.flat().begin(), m.flat().end());
    }
    const int bits = 2 + i % 3;
    const ClipChoice got = clip_grid_search(w, bits, grid);
    const auto want = family::brute_force_clip(w, bits, grid);
    match += got.alpha == want.alpha && got.beta == want.beta && got.squared_error == want.err;
  }
  return {match == 20, fmt("%.0f/20 channels match exhaustive search", match)};
}

Outcome shift_pipeline_fidelity() {
  std::mt19937_64 rng(4);
  int within = 0, identical = 0;
  double worst = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    const int bits = 3 + pair % 2;
    const int precision = 6 + (pair / 2) % 3;
    const auto w = oracle::gaussian(16, 64, 0.02, rng);
    const auto x = oracle::gaussian(8, 64, 1.0, rng);
    const auto tl = tlq_quantize_matrix(w, bits, ClipGrid::default_grid());
    const ShiftConfig cfg{precision};
    const auto shift = integerize(tl, cfg);
    const auto codes = TokenCodes::from(per_token_quantize(x, 8));
    const auto y = shift_matmul(shift, codes);
    identical += y == shift_matmul(shift, codes);

    const double bound = residual_error_bound(cfg);
    bool ok = true;
    for (std::size_t t = 0; t < y.rows(); ++t)
      for (std::size_t o = 0; o < y.cols(); ++o) {
        // Dequantized operands in extended precision, no intermediate float rounding.
        long double ref = 0, mag = 0;
        const auto& p = tl.channels[o];
        for (std::size_t i = 0; i < 64; ++i) {
          const Sign s = tl.masks.at(o, i);
          if (s == Sign::zero) continue;
          const double e = s == Sign::pos ? double(p.s_pos) * (tl.codes(o, i) + p.z_pos)
                                          : double(p.s_neg) * (tl.codes(o, i) + p.z_neg);
          const long double wv = (s == Sign::pos ? 1.0L : -1.0L) * std::exp2l(e);
          const long double xv = static_cast<long double>(codes.scales[t]) *
                                 (codes.codes(t, i) + static_cast<long double>(codes.zero_points[t]));
          ref += wv * xv;
          mag += std::fabs(wv * xv);
        }
        const double dev = static_cast<double>(std::fabs(y(t, o) - ref));
        const double allowed = static_cast<double>(bound * mag);
        if (mag > 0) worst = std::max(worst, dev / static_cast<double>(mag));
        // Final double rounding of the result: a few ulps of the magnitude.
        if (dev > allowed + 1e-15 * static_cast<double>(mag)) ok = false;
      }
    within += ok;
  }
  return {within == 100 && identical == 100,
          fmt("%.0f/100 within bound, %.0f/100 bit-identical, worst relative deviation %.3g", within, identical,
              worst)};
}

Outcome rotation_invariance() {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t c : {64u, 256u, 1024u}) {
    Matrix<float> x = oracle::gaussian(32, c, 1.0, rng);
    for (std::size_t t = 0; t < 32; ++t) x(t, c / 3) *= 60.0f;
    const auto w = oracle::gaussian(48, c, 0.02, rng);
    const RotationConfig rc{128, 16};
    for (const RotationPlan& plan : {RotationPlan::identity(c), hadamard_plan(c, rc), dual_plan(x, rc)}) {
      const auto ref = oracle::matmul_t(x, w);
      const auto got =
          oracle::matmul_t(apply_rotation(x, plan, Side::activations), apply_rotation(w, plan, Side::weights));
      worst = std::max(worst, frob_diff(got, ref) / oracle::frob(ref));
      ++cases;
    }
  }
  return {worst < 1e-5, fmt("%.0f plans, worst relative deviation %.3g (limit 1e-5)", cases, worst)};
}

Outcome greedy_contract() {
  std::mt19937_64 rng(6);
  const BlockLayout layout = BlockLayout::for_channels(128, 128);
  int good = 0, steps = 0;
  double worst_orth = 0.0;
  for (int i = 0; i < 50; ++i) {
    Matrix<float> x = oracle::gaussian(64, 128, 1.0, rng);
    const std::size_t dom = rng() % 128;
    const float boost = 20.0f + static_cast<float>(rng() % 80);
    for (std::size_t t = 0; t < 64; ++t) x(t, dom) *= boost;
    const auto g = greedy_rotation(x, layout, 16);
    const auto& trace = g.traces.at(0);
    bool ok = trace.max_abs.size() == trace.pivots.size() + 1 && !trace.pivots.empty();
    for (std::size_t k = 1; ok && k < trace.max_abs.size(); ++k) ok = trace.max_abs[k] < trace.max_abs[k - 1];
    steps += static_cast<int>(trace.pivots.size());

    // Independent checks: B B^T = I, and the rotated block's max-abs matches the trace.
    const auto& b = g.rotation.blocks.at(0);
    for (std::size_t r = 0; r < 128; ++r)
      for (std::size_t s = 0; s < 128; ++s) {
        double dot = 0;
        for (std::size_t k = 0; k < 128; ++k) dot += double(b(r, k)) * b(s, k);
        worst_orth = std::max(worst_orth, std::fabs(dot - (r == s ? 1.0 : 0.0)));
      }
    double rotated = 0;
    for (float v : multiply_right(x, g.rotation).flat()) rotated = std::max(rotated, double(std::fabs(v)));
    if (std::fabs(rotated - trace.max_abs.back()) > 1e-4 * rotated) ok = false;
    good += ok;
  }
  return {good == 50 && worst_orth < 1e-5,
          fmt("%.0f/50 blocks strictly decreasing (%.0f accepted steps), orthogonality error %.3g", good, steps,
              worst_orth)};
}

Outcome dispatch() {
  const double j_ones = compute_J(ActivationBatch(2, 16, 64, 1.0f)).J;
  bool ok = j_ones == 1.0;
  const Matrix<float> x = Matrix<float>(16, 128, 1.0f);
  const RotationConfig rc{128, 16};
  for (int rep = 0; rep < 2; ++rep) {
    LayerStats low, high;
    low.J = 0.999;
    high.J = 1.0;
    ok = ok && dispatch_kind(0.999, 1.0) == PlanKind::hadamard && dispatch_kind(1.0, 1.0) == PlanKind::dual;
    ok = ok && select_rotation_plan(low, 1.0, x, rc).kind == PlanKind::hadamard;
    ok = ok && select_rotation_plan(high, 1.0, x, rc).kind == PlanKind::dual;
  }
  return {ok, fmt("J(ones) = %.17g, 0.999 -> hadamard, 1.0 -> dual", j_ones)};
}

Outcome smoothing_identity() {
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    Matrix<float> x = oracle::gaussian(32, 96, 1.0, rng);
    for (std::size_t t = 0; t < 32; ++t) x(t, rng() % 96) *= 30.0f;
    const auto w = oracle::gaussian(40, 96, 0.02, rng);
    const auto m = smooth_migrate(x, w, 0.5);
    const auto ref = oracle::matmul_t(x, w);
    worst = std::max(worst, frob_diff(oracle::matmul_t(m.x, m.w), ref) / oracle::frob(ref));
  }
  return {worst < 1e-6, fmt("worst relative deviation %.3g over 20 layers (limit 1e-6)", worst)};
}

Outcome ablation_direction() {
  QuantConfig cfg;
  cfg.jobs = 1;
  int ordered = 0;
  std::ostringstream d;
  for (std::uint64_t i = 0; i < 10; ++i) {
    ActivationSpec as;
    as.batches = 8;
    as.tokens = 64;
    as.channels = 128;
    as.outlier_channels = 2;
    as.outlier_scale = 50.0;
    as.seed = 1000 + i;
    const CorpusLayer layer{"layer" + std::to_string(i), gen_gaussian_longtail({128, 128, 0.02, 0.01, 8.0, 500 + i}),
                            gen_activations(as)};
    const auto rows = run_ablation(layer, cfg);
    const double neither = rows[0].output_rel_error, tlq = rows[2].output_rel_error, both = rows[3].output_rel_error;
    ordered += both <= tlq && tlq <= neither;
    if (i == 0) d << fmt(" (layer0: neither %.3g, tlq %.3g, tlq+rotation %.3g)", neither, tlq, both);
  }
  return {ordered >= 9, fmt("%.0f/10 layers ordered (need 9)", ordered) + d.str()};
}

Outcome token_locality() {
  std::mt19937_64 rng(10);
  const Matrix<float> base = oracle::gaussian(8, 16, 1.0, rng);
  const auto q0 = per_token_quantize(base, 4);
  const auto d0 = dequantize_rows(q0);
  const auto row_err = [](const Matrix<float>& x, const Matrix<float>& d, std::size_t t) {
    double e = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) e += std::pow(double(x(t, c)) - d(t, c), 2);
    return e;
  };
  int trials = 0, clean = 0;
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t c = 0; c < 16; ++c)
      for (float v : {0.0f, 1e3f, -1e3f, 0.5f * base(t, c), 245.0f}) {
        Matrix<float> x = base;
        x(t, c) = v;
        const auto q = per_token_quantize(x, 4);
        const auto d = dequantize_rows(q);
        bool ok = true;
        for (std::size_t u = 0; u < 8; ++u) {
          if (u == t) continue;
          ok = ok && q.params[u] == q0.params[u] && row_err(x, d, u) == row_err(base, d0, u);
          for (std::size_t k = 0; k < 16; ++k) ok = ok && q.codes(u, k) == q0.codes(u, k);
        }
        ++trials;
        clean += ok;
      }
  return {clean == trials, fmt("%.0f/%.0f perturbations left other tokens unchanged", clean, trials)};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"3-bit twin-log beats 3-bit uniform on long-tail matrices", twinlog_beats_uniform},
      {"twin-log round-trips representable channels exactly", twinlog_exactness},
      {"clip search equals exhaustive enumeration", clip_search_equivalence},
      {"shift matmul within the residual bound and deterministic", shift_pipeline_fidelity},
      {"rotation plans preserve the float product", rotation_invariance},
      {"greedy rotation strictly reduces block max-abs", greedy_contract},
      {"J metric and dispatch threshold", dispatch},
      {"smoothing preserves the float product", smoothing_identity},
      {"ablation order tlq+rotation <= tlq <= neither", ablation_direction},
      {"per-token quantization locality", token_locality},
  };
  int failed = 0, n = 0;
  for (const auto& [name, run] : criteria) {
    ++n;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d: %s  %s: %s\n", n, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", n - failed, n);
  return failed == 0 ? 0 : 1;
}
