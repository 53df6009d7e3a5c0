// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvst/cvst.hpp"
#include "cvst/datagen.hpp"
#include "cvst/evaluation.hpp"
#include "cvst/parallel.hpp"
#include "cvst/report.hpp"
#include "cvst/sequential.hpp"
#include "cvst/simulation.hpp"
#include "cvst/stat_tests.hpp"

using namespace cvst;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[violated: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// 1 ---------------------------------------------------------------------------
void safety_zone_anchors(Outcome& out) {
  const auto t0 = Clock::now();
  const double s10 = safety_zone(plan_wald_test(10, 0.01, 0.1));
  const double s20 = safety_zone(plan_wald_test(20, 0.01, 0.1));
  const double elapsed = seconds_since(t0);
  out.require(s10 >= 2.68 && s10 <= 2.78, "S=10 safety zone in [2.68, 2.78]");
  out.require(s20 >= 7.75 && s20 <= 7.95, "S=20 safety zone in [7.75, 7.95]");
  out.require(elapsed < 1e-3, "runtime < 1 ms");
  out.detail << "s_safe(10)=" << fmt(s10, 5) << " s_safe(20)=" << fmt(s20, 5);
}

// 2 ---------------------------------------------------------------------------
void minimum_steps(Outcome& out) {
  const int steps = min_steps(0.01, 0.1);
  bool rejected = false;
  try {
    plan_wald_test(6, 0.01, 0.1);
  } catch (const InfeasiblePlan&) {
    rejected = true;
  }
  bool seven_ok = true;
  try {
    plan_wald_test(7, 0.01, 0.1);
  } catch (const InfeasiblePlan&) {
    seven_ok = false;
  }
  out.require(steps == 7, "min_steps(0.01, 0.1) = 7");
  out.require(rejected, "plan_wald_test(6, ...) is infeasible");
  out.require(seven_ok, "plan_wald_test(7, ...) is feasible");
  out.detail << "min_steps=" << steps << ", S=6 rejected=" << (rejected ? "yes" : "no");
}

// 3 ---------------------------------------------------------------------------
void no_drops_in_safety_zone(Outcome& out) {
  const auto t0 = Clock::now();
  for (int S : {10, 20}) {
    const int safe = integer_safety_zone(plan_wald_test(S, 0.01, 0.1));
    long long hits = 0;
    for (int cp = 0; cp <= safe; ++cp)
      for (double before : {0.0, 0.1, 0.5}) {
        SwitchingBernoulliSpec spec;
        spec.steps_S = S;
        spec.pi_before = before;
        spec.change_point = cp;
        spec.trials = 10000;
        spec.seed = 3;
        hits += simulate_false_negatives(spec, SequentialTest::wald, 0.01, 0.1).hits;
      }
    SwitchingBernoulliSpec past;
    past.steps_S = S;
    past.pi_before = 0.1;
    past.change_point = safe + 1;
    past.trials = 10000;
    past.seed = 3;
    const auto beyond = simulate_false_negatives(past, SequentialTest::wald, 0.01, 0.1);
    out.require(hits == 0, "zero drops for change points <= floor(s_safe) at S=" + std::to_string(S));
    out.require(beyond.rate > 0.0, "positive rate just past the safety zone at S=" + std::to_string(S));
    out.detail << "S=" << S << ": drops(cp<=" << safe << ")=" << hits << ", rate(cp=" << safe + 1
               << ")=" << fmt(beyond.rate) << "; ";
  }
  const double elapsed = seconds_since(t0);
  out.require(elapsed < 10.0, "runtime < 10 s");
  out.detail << fmt(elapsed, 3) << " s";
}

// 4 ---------------------------------------------------------------------------
std::vector<std::vector<std::uint64_t>> enumerate_paths(const WaldTestPlan& plan) {
  const int S = plan.steps_S;
  const int s0 = integer_safety_zone(plan);
  std::vector<std::vector<std::uint64_t>> table(S + 1, std::vector<std::uint64_t>(S + 1, 0));
  for (int col = 0; col <= S; ++col) {
    if (col <= s0) {
      table[0][col] = 1;
      continue;
    }
    const int len = col - s0;
    for (std::uint32_t mask = 0; mask < (1u << len); ++mask) {
      int sum = 0;
      bool alive = true;
      for (int k = 0; k < len && alive; ++k) {
        sum += static_cast<int>((mask >> k) & 1u);
        alive = sum > plan.lower_boundary(s0 + k + 1);
      }
      if (alive) ++table[sum][col];
    }
  }
  return table;
}

void error_bound_oracle(Outcome& out) {
  const auto t0 = Clock::now();
  const auto plan = plan_wald_test(20, 0.01, 0.1);
  for (double pi : {0.8, 0.9, 0.95}) {
    const double bound = cvst_error_bound(plan, pi);
    const auto mc = simulate_worst_case_drops(plan, pi, 200000, 17);
    const double z = std::abs(mc.rate - bound) / mc.std_error;
    out.require(z <= 3.0, "Monte Carlo within 3 SE at pi=" + fmt(pi, 2));
    out.detail << "pi=" << pi << ": bound=" << fmt(bound) << " mc=" << fmt(mc.rate) << " (z=" << fmt(z, 2)
               << "); ";
  }
  int tables = 0;
  for (int S = 7; S <= 30; ++S)
    for (double a : {0.01, 0.05})
      for (double b : {0.1, 0.2}) {
        if (S < min_steps(a, b)) continue;
        const auto p = plan_wald_test(S, a, b);
        if (S - integer_safety_zone(p) > 14) continue;
        const PathCounter paths(p);
        const auto oracle = enumerate_paths(p);
        for (int col = 0; col <= S; ++col)
          for (int row = 0; row <= col; ++row)
            if (paths(row, col) != oracle[row][col]) {
              out.require(false, "path table S=" + std::to_string(S));
              col = S + 1;
              break;
            }
        ++tables;
      }
  const double elapsed = seconds_since(t0);
  out.require(tables > 0, "at least one path table compared");
  out.require(elapsed < 60.0, "runtime < 60 s");
  out.detail << tables << " path tables match enumeration; " << fmt(elapsed, 3) << " s";
}

// 5 ---------------------------------------------------------------------------
Eigen::MatrixXd to_matrix(const nlohmann::json& rows) {
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j].get<double>();
  return m;
}

void statistic_checks(Outcome& out) {
  Eigen::MatrixXd c(3, 4);
  c << 1, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0;
  const auto q = cochran_q(c);
  out.require(std::abs(q.statistic - 6.0) < 1e-9 && std::abs(q.p_value - std::exp(-3.0)) < 1e-9,
              "Cochran hand example T=6, p=exp(-3)");
  Eigen::MatrixXd f(3, 10);
  f.row(0).setConstant(0.1);
  f.row(1).setConstant(0.2);
  f.row(2).setConstant(0.3);
  const auto fr = friedman(f);
  out.require(std::abs(fr.statistic - 20.0) < 1e-9 && std::abs(fr.p_value - std::exp(-10.0)) < 1e-9,
              "Friedman hand example T=20, p=exp(-10)");

  std::ifstream in(std::string(CVST_TEST_DATA) + "/stat_reference.json");
  if (!in) {
    out.require(false, "reference fixture readable");
    return;
  }
  const auto ref = nlohmann::json::parse(in);
  double worst = 0.0;
  int cases = 0;
  for (const char* kind : {"cochran", "friedman"}) {
    for (const auto& k : ref[kind]) {
      const auto m = to_matrix(k["rows"]);
      const auto r = std::string(kind) == "cochran" ? cochran_q(m) : friedman(m);
      worst = std::max({worst, std::abs(r.statistic - k["statistic"].get<double>()),
                        std::abs(r.p_value - k["p_value"].get<double>())});
      ++cases;
    }
  }
  out.require(cases == 200, "100 reference matrices per test");
  out.require(worst <= 1e-8, "agreement with the reference package to 1e-8");
  out.detail << "Q=" << fmt(q.statistic, 10) << " p=" << fmt(q.p_value, 10) << "; Friedman T="
             << fmt(fr.statistic, 10) << " p=" << fmt(fr.p_value, 10) << "; " << cases
             << " reference cases, max deviation " << fmt(worst, 3);
}

// 6 ---------------------------------------------------------------------------
std::vector<Configuration> benchmark_grid() {
  std::vector<double> sigmas, lambdas;
  for (int i = 0; i <= 60; ++i) sigmas.push_back(std::round((-3.0 + 0.1 * i) * 1e12) / 1e12);
  for (int i = -7; i <= 2; ++i) lambdas.push_back(i);
  return make_grid({{"log10_sigma", sigmas}, {"log10_lambda", lambdas}});
}

double test_mse(const Dataset& train, const Dataset& test, const Configuration& c) {
  const auto model = train_model(train, LearnerSpec::from(c, LearnerKind::krr));
  return (model.predict(test.features) - test.targets).array().square().mean();
}

bool non_increasing(const std::vector<int>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1]) return false;
  return true;
}

void end_to_end_quality(Outcome& out) {
  const auto t0 = Clock::now();
  const auto grid = benchmark_grid();
  const unsigned threads = default_thread_count();
  int close_residual = 0, close_outlier = 0, faster = 0, monotone = 0;
  const int seeds = 10;
  std::printf("  [6] %zu configurations, %u thread(s)\n", grid.size(), threads);
  std::printf("  [6] seed  mse_fullcv  d_residual  d_outlier  t_cvst(s)  t_fullcv(s)  stop\n");
  for (int seed = 1; seed <= seeds; ++seed) {
    const auto train = gen_noisy_sinc({Family::noisy_sinc, 2, 0.1, 1000, static_cast<std::uint64_t>(seed)});
    const auto test =
        gen_noisy_sinc({Family::noisy_sinc, 2, 0.1, 10000, static_cast<std::uint64_t>(seed) + 1000000});

    CVSTParams params;
    params.seed = static_cast<std::uint64_t>(seed);
    params.threads = threads;
    auto t = Clock::now();
    const auto residual = run_cvst(train, LearnerKind::krr, grid, params);
    const double t_cvst = seconds_since(t);
    params.similarity_mode = SimilarityMode::outlier;
    const auto outlier = run_cvst(train, LearnerKind::krr, grid, params);

    t = Clock::now();
    const auto cv = full_cv(train, grid, LearnerKind::krr, 10, static_cast<std::uint64_t>(seed), threads);
    const double t_full = seconds_since(t);

    const double mse_cv = test_mse(train, test, grid[cv.winner]);
    const double d_res = std::abs(test_mse(train, test, residual.winner) - mse_cv);
    const double d_out = std::abs(test_mse(train, test, outlier.winner) - mse_cv);
    close_residual += d_res <= 0.01;
    close_outlier += d_out <= 0.01;
    faster += t_cvst < t_full;
    monotone += non_increasing(residual.survivors_per_step) && non_increasing(outlier.survivors_per_step);
    std::printf("  [6] %4d  %10.5f  %10.5f  %9.5f  %9.2f  %11.2f  %d\n", seed, mse_cv, d_res, d_out,
                t_cvst, t_full, residual.steps_run);
    std::fflush(stdout);
  }
  out.require(close_residual >= 8, "residual mode within 0.01 in >= 8 seeds");
  out.require(close_outlier >= 8, "outlier mode within 0.01 in >= 8 seeds");
  out.require(faster >= 9, "CVST faster than full CV in >= 9 seeds");
  out.require(monotone == seeds, "survivor counts non-increasing in every run");
  out.detail << "|dMSE|<=0.01: residual " << close_residual << "/10, outlier " << close_outlier
             << "/10; faster " << faster << "/10; monotone survivors " << monotone << "/10; "
             << fmt(seconds_since(t0), 4) << " s";
}

// 7 ---------------------------------------------------------------------------
void speed_gain_shape(Outcome& out) {
  const auto t0 = Clock::now();
  const struct {
    const char* name;
    int winners, losers;
  } cases[] = {{"easy 1:3", 1, 3}, {"medium 1:1", 1, 1}, {"hard 3:1", 3, 1}};
  for (const auto& c : cases) {
    auto peak = [&](int lo, int hi) {
      double best = 0.0;
      for (int S = lo; S <= hi; ++S) {
        SpeedGainSpec spec;
        spec.steps_S = S;
        spec.winner_weight = c.winners;
        spec.loser_weight = c.losers;
        spec.resamples = 200;
        best = std::max(best, median(simulate_speed_gain(spec)));
      }
      return best;
    };
    const double low = peak(10, 20), high = peak(40, 50);
    out.require(low > high, std::string("peak at S in [10, 20] for ") + c.name);
    out.detail << c.name << " (winners:losers): " << fmt(low, 3) << " vs " << fmt(high, 3) << "; ";
  }
  const double elapsed = seconds_since(t0);
  out.require(elapsed < 30.0, "runtime < 30 s");
  out.detail << fmt(elapsed, 3) << " s";
}

// 8 ---------------------------------------------------------------------------
void open_vs_closed(Outcome& out) {
  const auto t0 = Clock::now();
  SwitchingBernoulliSpec spec;
  spec.steps_S = 20;
  spec.pi_before = 0.3;
  spec.change_point = integer_safety_zone(plan_wald_test(20, 0.01, 0.1)) + 1;
  spec.trials = 10000;
  spec.seed = 8;
  const auto wald = simulate_false_negatives(spec, SequentialTest::wald, 0.01, 0.1);
  const auto spicer = simulate_false_negatives(spec, SequentialTest::spicer, 0.01, 0.1);
  const double elapsed = seconds_since(t0);
  out.require(spicer.rate >= wald.rate, "Spicer rate >= Wald rate");
  out.require(elapsed < 30.0, "runtime < 30 s");
  const auto sp = plan_spicer_test(20, 0.01, 0.1);
  out.detail << "change point " << spec.change_point << ": wald=" << fmt(wald.rate) << " spicer="
             << fmt(spicer.rate) << " (F_a=" << sp.fortune_a << ", F_b=" << sp.fortune_b << "); "
             << fmt(elapsed, 3) << " s";
}

// 9 ---------------------------------------------------------------------------
void budget_planner(Outcome& out) {
  const auto t0 = Clock::now();
  Rng rng(99);
  int feasible = 0, drawn = 0;
  double max_slack = 0.0;
  while (feasible < 50 && drawn < 10000) {
    ++drawn;
    BudgetSpec spec;
    spec.full_fit_time_t = std::pow(10.0, rng.uniform(-2.0, 1.0));
    spec.configs_K = 1 + static_cast<int>(rng.below(500));
    spec.keep_fraction_r = rng.uniform(0.05, 0.95);
    spec.safety_fraction_s_r = rng.uniform(0.05, 0.6);
    spec.complexity_m = 1 + static_cast<int>(rng.below(3));
    spec.budget_T = spec.full_fit_time_t * spec.configs_K * std::pow(10.0, rng.uniform(0.0, 3.0));
    BudgetPlan plan;
    try {
      plan = plan_budget(spec);
    } catch (const BudgetError&) {
      continue;
    }
    ++feasible;
    const double T = spec.budget_T;
    const double exact = budget_exact_cost(spec, plan.steps_S);
    out.require(exact <= T, "exact cost at S within the budget");
    out.require(exact <= plan.bound_cost * (1 + 1e-12), "exact cost below the asymptotic bound");
    out.require(budget_bound_cost(spec, plan.steps_S + 1) > T, "S+1 exceeds the budget under the bound");
    max_slack = std::max(max_slack, (plan.bound_cost - exact) / T);
  }
  out.require(feasible == 50, "50 feasible specifications drawn");

  auto which = [](const BudgetSpec& spec) {
    try {
      plan_budget(spec);
    } catch (const BudgetError& e) {
      return static_cast<int>(e.constraint());
    }
    return 0;
  };
  BudgetSpec base;
  base.full_fit_time_t = 1.0;
  base.configs_K = 1;
  BudgetSpec c1 = base, c2 = base, c3 = base;
  c1.budget_T = 0.01;
  c2.budget_T = 0.5 * ((1 - base.keep_fraction_r) * std::pow(base.safety_fraction_s_r, 3) +
                       base.keep_fraction_r);
  c3.budget_T = 3.0;
  c3.safety_fraction_s_r = 0.01;
  const int e1 = which(c1), e2 = which(c2), e3 = which(c3);
  out.require(e1 == 1 && e2 == 2 && e3 == 3, "each constraint reported distinctly");
  const double elapsed = seconds_since(t0);
  out.require(elapsed < 5.0, "runtime < 5 s");
  out.detail << feasible << " feasible specs (" << drawn << " drawn); max slack bound-exact "
             << fmt(100 * max_slack, 3) << "% of T; constraint errors " << e1 << "," << e2 << ","
             << e3 << "; " << fmt(elapsed, 3) << " s";
}

// 10 --------------------------------------------------------------------------
void determinism(Outcome& out) {
  const auto data = gen_noisy_sinc({Family::noisy_sinc, 2, 0.1, 600, 10});
  std::vector<double> sigmas;
  for (int i = 0; i <= 20; ++i) sigmas.push_back(-2.0 + 0.2 * i);
  const auto grid = make_grid({{"log10_sigma", sigmas}, {"log10_lambda", {-7.0, -5.0, -3.0, -1.0, 1.0}}});
  const InputDigests digests{dataset_digest(data), grid_digest(grid), 10};
  auto report = [&](unsigned threads) {
    CVSTParams params;
    params.seed = 10;
    params.threads = threads;
    const auto result = run_cvst(data, LearnerKind::krr, grid, params);
    return run_report(result, grid, params, LearnerKind::krr, Task::regression, digests, {false}).dump(1);
  };
  const std::string serial = report(1), again = report(1), parallel = report(4);
  out.require(serial == again, "repeated single-threaded reports identical");
  out.require(serial == parallel, "single-threaded and 4-thread reports identical");
  out.detail << serial.size() << "-byte report, digest " << fnv1a_hex(serial);
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria = {
      {"safety-zone anchors", safety_zone_anchors},
      {"minimum steps", minimum_steps},
      {"no drops inside the safety zone", no_drops_in_safety_zone},
      {"error bound vs Monte Carlo and path enumeration", error_bound_oracle},
      {"statistic hand checks and reference agreement", statistic_checks},
      {"end-to-end quality vs full cross-validation", end_to_end_quality},
      {"speed-gain simulation shape", speed_gain_shape},
      {"open vs closed sequential test", open_vs_closed},
      {"budget planner", budget_planner},
      {"report determinism across thread counts", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome out;
    try {
      criteria[i].second(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << "[exception: " << e.what() << "]";
    }
    failed += !out.pass;
    std::printf("%s  [%zu] %s: %s\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                out.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("\n%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
