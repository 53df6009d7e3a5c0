// Command-line front end: model selection runs, the full-CV baseline, data
// generation, and the sequential-test calculators and simulations.
//
// Exit codes: 0 success, 2 argument error, 3 data error, 4 infeasible plan.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvst/cvst.hpp"
#include "cvst/datagen.hpp"
#include "cvst/evaluation.hpp"
#include "cvst/parallel.hpp"
#include "cvst/report.hpp"
#include "cvst/sequential.hpp"
#include "cvst/simulation.hpp"

namespace {

enum Exit { kOk = 0, kArgs = 2, kData = 3, kInfeasible = 4 };

// Options shared by `run` and `fullcv`.
struct SearchArgs {
  std::string data;
  std::string grid;
  std::string learner = "krr";
  std::string test;
  std::string out;
  std::uint64_t seed = 1;
  unsigned threads = cvst::default_thread_count();
  bool no_timing = false;
};

void add_search_options(CLI::App* cmd, SearchArgs& a) {
  cmd->add_option("--data", a.data, "Training data CSV (header x1..xd,y)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--grid", a.grid, "Grid file (JSON with an \"axes\" list)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--learner", a.learner, "Learner: krr (regression) or klr (classification)")
      ->check(CLI::IsMember({"krr", "klr"}))
      ->capture_default_str();
  cmd->add_option("--seed", a.seed, "Random seed")->capture_default_str();
  cmd->add_option("--threads", a.threads,
                  "Worker threads (default: CVST_THREADS, else hardware concurrency)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--test", a.test,
                  "Optional test CSV; adds the winner's held-out loss to the report")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", a.out, "Report path (default: standard output)");
  cmd->add_flag("--no-timing", a.no_timing,
                "Omit wall-clock fields so reports are byte-reproducible");
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cvst::DataError("cannot write '" + path + "'");
  out << text;
}

std::string format(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int default_wstop(int steps) { return std::min(steps >= 20 ? 6 : 3, std::max(1, steps - 1)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model selection by cross-validation with sequential testing"};
  app.set_version_flag("--version", std::string(cvst::kVersion));
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  // run ---------------------------------------------------------------------
  SearchArgs run_args;
  cvst::CVSTParams params;
  std::optional<int> wstop;
  std::string similarity = "residual";
  auto* run = app.add_subcommand("run", "Sequential-testing search over a configuration grid");
  add_search_options(run, run_args);
  run->add_option("--steps", params.steps_S, "Number of steps S")->capture_default_str();
  run->add_option("--alpha", params.alpha, "Level of the top/flop and similarity tests")
      ->capture_default_str();
  run->add_option("--alpha-l", params.alpha_l, "Wald test level alpha_l")->capture_default_str();
  run->add_option("--beta-l", params.beta_l, "Wald test level beta_l")->capture_default_str();
  run->add_option("--wstop", wstop, "Early-stopping window (default 3; 6 when --steps >= 20)");
  run->add_option("--similarity", similarity, "Regression top/flop test: residual or outlier")
      ->check(CLI::IsMember({"residual", "outlier"}))
      ->capture_default_str();

  // fullcv ------------------------------------------------------------------
  SearchArgs cv_args;
  int folds = 10;
  auto* fullcv = app.add_subcommand("fullcv", "k-fold cross-validation over the full grid");
  add_search_options(fullcv, cv_args);
  fullcv->add_option("--folds", folds, "Number of folds")->capture_default_str();

  // gen ---------------------------------------------------------------------
  cvst::GeneratorSpec gen_spec;
  std::string family = "sinc";
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate a noisy sine or noisy sinc data set");
  gen->add_option("--family", family, "sine (classification) or sinc (regression)")
      ->check(CLI::IsMember({"sine", "sinc", "noisy_sine", "noisy_sinc"}))
      ->capture_default_str();
  gen->add_option("--dim", gen_spec.intrinsic_dim, "Intrinsic dimension d")->capture_default_str();
  gen->add_option("--noise", gen_spec.noise, "Noise standard deviation")->capture_default_str();
  gen->add_option("--count", gen_spec.count, "Number of points")->capture_default_str();
  gen->add_option("--seed", gen_spec.seed, "Random seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV (default: standard output)");

  // safety-zone -------------------------------------------------------------
  int sz_steps = 10;
  double sz_alpha_l = 0.01, sz_beta_l = 0.1;
  std::optional<double> sz_target;
  int sz_digits = 2;
  auto* sz = app.add_subcommand("safety-zone", "Safety zone of the Wald test");
  sz->add_option("--steps", sz_steps, "Number of steps S")->capture_default_str();
  sz->add_option("--alpha-l", sz_alpha_l, "Wald test level alpha_l")->capture_default_str();
  sz->add_option("--beta-l", sz_beta_l, "Wald test level beta_l")->capture_default_str();
  sz->add_option("--target", sz_target,
                 "Instead print the largest beta_l whose safety zone reaches this value");
  sz->add_option("--digits", sz_digits, "Decimal places printed")->capture_default_str();

  // error-bound -------------------------------------------------------------
  int eb_steps = 20;
  double eb_alpha_l = 0.01, eb_beta_l = 0.1;
  std::optional<double> eb_pi;
  std::vector<double> eb_pis{0.5, 0.8, 0.9, 0.95, 0.99};
  int eb_from = 0;
  auto* eb = app.add_subcommand("error-bound",
                                "Worst-case probability of dropping a configuration");
  eb->add_option("--steps", eb_steps, "Number of steps S")->capture_default_str();
  eb->add_option("--alpha-l", eb_alpha_l, "Wald test level alpha_l")->capture_default_str();
  eb->add_option("--beta-l", eb_beta_l, "Wald test level beta_l")->capture_default_str();
  eb->add_option("--pi", eb_pi, "Success probability; prints a single bound");
  eb->add_option("--pis", eb_pis, "Success probabilities for the CSV table (without --pi)")
      ->capture_default_str();
  eb->add_option("--steps-from", eb_from,
                 "First S of the CSV table (default: minimum feasible S)")
      ->capture_default_str();

  // plan-budget -------------------------------------------------------------
  cvst::BudgetSpec budget;
  budget.configs_K = 100;
  budget.full_fit_time_t = 1.0;
  budget.budget_T = 1000.0;
  auto* pb = app.add_subcommand("plan-budget", "Largest step count that fits a time budget");
  pb->add_option("--budget", budget.budget_T, "Time budget T (seconds)")->capture_default_str();
  pb->add_option("--fit-time", budget.full_fit_time_t,
                 "Time t of one fit on the full data (seconds)")
      ->capture_default_str();
  pb->add_option("--configs", budget.configs_K, "Number of configurations K")
      ->capture_default_str();
  pb->add_option("--keep", budget.keep_fraction_r,
                 "Fraction r of configurations kept after the safety zone")
      ->capture_default_str();
  pb->add_option("--safety", budget.safety_fraction_s_r,
                 "Safety zone as a fraction s_r of the steps")
      ->capture_default_str();
  pb->add_option("--complexity", budget.complexity_m, "Learner complexity exponent m")
      ->capture_default_str();

  // simulate ----------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Monte Carlo simulations (CSV output)");
  sim->require_subcommand(1);

  cvst::SwitchingBernoulliSpec fn_spec;
  std::string fn_test = "wald";
  double fn_alpha_l = 0.01, fn_beta_l = 0.1;
  std::optional<int> fn_change;
  std::string fn_out;
  auto* fn = sim->add_subcommand("false-negatives",
                                 "Drop rate of configurations that switch to winning");
  fn->add_option("--test", fn_test, "Sequential test: wald or spicer")
      ->check(CLI::IsMember({"wald", "spicer"}))
      ->capture_default_str();
  fn->add_option("--steps", fn_spec.steps_S, "Number of steps S")->capture_default_str();
  fn->add_option("--alpha-l", fn_alpha_l, "Test level alpha_l")->capture_default_str();
  fn->add_option("--beta-l", fn_beta_l, "Test level beta_l")->capture_default_str();
  fn->add_option("--pi-before", fn_spec.pi_before, "Success probability before the change")
      ->capture_default_str();
  fn->add_option("--pi-after", fn_spec.pi_after, "Success probability after the change")
      ->capture_default_str();
  fn->add_option("--change-point", fn_change,
                 "Change point; all change points 0..S are simulated when omitted");
  fn->add_option("--trials", fn_spec.trials, "Trials per row")->capture_default_str();
  fn->add_option("--seed", fn_spec.seed, "Random seed")->capture_default_str();
  fn->add_option("--out", fn_out, "Output CSV (default: standard output)");

  cvst::SpeedGainSpec sg_spec;
  std::vector<int> sg_steps{10, 20, 30, 40, 50};
  std::string sg_test = "wald";
  std::string sg_out;
  auto* sg = sim->add_subcommand("speed-gain", "Relative speed-up over full cross-validation");
  sg->add_option("--steps", sg_steps, "Step counts S to simulate")->capture_default_str();
  sg->add_option("--test", sg_test, "Sequential test: wald or spicer")
      ->check(CLI::IsMember({"wald", "spicer"}))
      ->capture_default_str();
  sg->add_option("--configs", sg_spec.configs_K, "Number of configurations K")
      ->capture_default_str();
  sg->add_option("--winners", sg_spec.winner_weight, "Winner share of the winner:loser ratio")
      ->capture_default_str();
  sg->add_option("--losers", sg_spec.loser_weight, "Loser share of the winner:loser ratio")
      ->capture_default_str();
  sg->add_option("--pi-winner-lo", sg_spec.pi_winner_lo, "Lowest winner success probability")
      ->capture_default_str();
  sg->add_option("--pi-winner-hi", sg_spec.pi_winner_hi, "Highest winner success probability")
      ->capture_default_str();
  sg->add_option("--pi-loser-lo", sg_spec.pi_loser_lo, "Lowest loser success probability")
      ->capture_default_str();
  sg->add_option("--pi-loser-hi", sg_spec.pi_loser_hi, "Highest loser success probability")
      ->capture_default_str();
  sg->add_option("--folds", sg_spec.folds, "Folds of the reference cross-validation")
      ->capture_default_str();
  sg->add_option("--complexity", sg_spec.complexity_m, "Training cost exponent m")
      ->capture_default_str();
  sg->add_option("--alpha-l", sg_spec.alpha_l, "Test level alpha_l")->capture_default_str();
  sg->add_option("--beta-l", sg_spec.beta_l, "Test level beta_l")->capture_default_str();
  sg->add_option("--resamples", sg_spec.resamples, "Resamples per S")->capture_default_str();
  sg->add_option("--seed", sg_spec.seed, "Random seed")->capture_default_str();
  sg->add_option("--out", sg_out, "Output CSV (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kArgs;
  }

  try {
    if (*run) {
      const auto learner = cvst::parse_learner(run_args.learner);
      const auto task = cvst::task_of(learner);
      params.w_stop = wstop.value_or(default_wstop(params.steps_S));
      params.similarity_mode = cvst::parse_similarity(similarity);
      params.seed = run_args.seed;
      params.threads = run_args.threads;
      const cvst::Dataset data = cvst::load_csv(run_args.data, task);
      const auto grid = cvst::load_grid(run_args.grid);
      const auto result = cvst::run_cvst(data, learner, grid, params);
      nlohmann::json doc = cvst::run_report(
          result, grid, params, learner, task,
          {cvst::dataset_digest(data), cvst::grid_digest(grid), run_args.seed},
          {!run_args.no_timing});
      if (!run_args.test.empty())
        doc["evaluation"] = cvst::evaluation_block(data, cvst::load_csv(run_args.test, task),
                                                   result.winner, learner);
      emit(run_args.out, doc.dump(1) + "\n");
    } else if (*fullcv) {
      const auto learner = cvst::parse_learner(cv_args.learner);
      const auto task = cvst::task_of(learner);
      const cvst::Dataset data = cvst::load_csv(cv_args.data, task);
      const auto grid = cvst::load_grid(cv_args.grid);
      const auto started = std::chrono::steady_clock::now();
      const auto result = cvst::full_cv(data, grid, learner, folds, cv_args.seed, cv_args.threads);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      nlohmann::json doc = cvst::fullcv_report(
          result, grid, learner, task,
          {cvst::dataset_digest(data), cvst::grid_digest(grid), cv_args.seed}, seconds,
          {!cv_args.no_timing});
      if (!cv_args.test.empty())
        doc["evaluation"] = cvst::evaluation_block(data, cvst::load_csv(cv_args.test, task),
                                                   grid[result.winner], learner);
      emit(cv_args.out, doc.dump(1) + "\n");
    } else if (*gen) {
      gen_spec.family = cvst::parse_family(family);
      std::ostringstream out;
      cvst::write_csv(out, cvst::generate(gen_spec));
      emit(gen_out, out.str());
    } else if (*sz) {
      if (sz_target) {
        std::cout << format(cvst::max_beta_for_safety(sz_alpha_l, sz_steps, *sz_target), 6)
                  << '\n';
      } else {
        const auto plan = cvst::plan_wald_test(sz_steps, sz_alpha_l, sz_beta_l);
        std::cout << format(cvst::safety_zone(plan), sz_digits) << '\n';
      }
    } else if (*eb) {
      if (eb_pi) {
        const auto plan = cvst::plan_wald_test(eb_steps, eb_alpha_l, eb_beta_l);
        std::cout << cvst::format_double(cvst::cvst_error_bound(plan, *eb_pi)) << '\n';
      } else {
        const int first = std::max(eb_from, cvst::min_steps(eb_alpha_l, eb_beta_l));
        std::cout << "steps,pi,error_bound\n";
        for (int s = first; s <= eb_steps; ++s) {
          std::optional<cvst::WaldTestPlan> plan;
          try {
            plan = cvst::plan_wald_test(s, eb_alpha_l, eb_beta_l);
          } catch (const cvst::InfeasiblePlan&) {
            continue;  // S equal to the bound can still leave pi1 at 1
          }
          for (double pi : eb_pis)
            std::cout << s << ',' << pi << ','
                      << cvst::format_double(cvst::cvst_error_bound(*plan, pi)) << '\n';
        }
      }
    } else if (*pb) {
      const auto plan = cvst::plan_budget(budget);
      std::cout << "steps " << plan.steps_S << "\n"
                << "root " << cvst::format_double(plan.root) << "\n"
                << "a " << cvst::format_double(plan.coef_a) << "\n"
                << "b " << cvst::format_double(plan.coef_b) << "\n"
                << "bound_cost " << cvst::format_double(plan.bound_cost) << "\n"
                << "exact_cost " << cvst::format_double(plan.exact_cost) << "\n";
    } else if (*fn) {
      const auto kind = cvst::parse_sequential_test(fn_test);
      std::ostringstream out;
      out << "test,steps,pi_before,pi_after,change_point,estimate,std_error,trials\n";
      const int lo = fn_change.value_or(0), hi = fn_change.value_or(fn_spec.steps_S);
      for (int cp = lo; cp <= hi; ++cp) {
        fn_spec.change_point = cp;
        const auto est = cvst::simulate_false_negatives(fn_spec, kind, fn_alpha_l, fn_beta_l);
        out << fn_test << ',' << fn_spec.steps_S << ',' << fn_spec.pi_before << ','
            << fn_spec.pi_after << ',' << cp << ',' << cvst::format_double(est.rate) << ','
            << cvst::format_double(est.std_error) << ',' << est.trials << '\n';
      }
      emit(fn_out, out.str());
    } else if (*sg) {
      sg_spec.test = cvst::parse_sequential_test(sg_test);
      std::ostringstream out;
      out << "test,steps,winners,losers,median,q25,q75,resamples\n";
      for (int s : sg_steps) {
        sg_spec.steps_S = s;
        auto ratios = cvst::simulate_speed_gain(sg_spec);
        std::sort(ratios.begin(), ratios.end());
        auto quantile = [&](double q) {
          return ratios[static_cast<std::size_t>(q * static_cast<double>(ratios.size() - 1))];
        };
        out << sg_test << ',' << s << ',' << sg_spec.winner_weight << ','
            << sg_spec.loser_weight << ',' << cvst::format_double(cvst::median(ratios)) << ','
            << cvst::format_double(quantile(0.25)) << ','
            << cvst::format_double(quantile(0.75)) << ',' << ratios.size() << '\n';
      }
      emit(sg_out, out.str());
    }
  } catch (const cvst::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kArgs;
  } catch (const cvst::InfeasiblePlan& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  } catch (const cvst::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const cvst::LearnerFailure& e) {
    std::cerr << "learner failure: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
