#include "properties.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace idvae::testing {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void Report::begin_case(const std::string& property, std::uint64_t seed) {
  property_ = property;
  seed_ = seed;
}

void Report::record(const std::string& check, bool pass, std::string observed, std::string expected) {
  outcomes_.push_back({property_, check, seed_, pass, std::move(observed), std::move(expected)});
}

void Report::near(const std::string& check, double observed, double expected, double tol) {
  const bool ok = std::isfinite(observed) && std::abs(observed - expected) <= tol;
  record(check, ok, fmt(observed), fmt(expected) + " +- " + fmt(tol));
}

void Report::relative(const std::string& check, double observed, double expected, double rel) {
  const bool ok = std::isfinite(observed) && std::abs(observed - expected) <= rel * std::abs(expected);
  record(check, ok, fmt(observed), fmt(expected) + " (rel " + fmt(rel) + ")");
}

void Report::below(const std::string& check, double observed, double bound) {
  record(check, std::isfinite(observed) && observed <= bound, fmt(observed), "<= " + fmt(bound));
}

void Report::at_least(const std::string& check, double observed, double bound) {
  record(check, std::isfinite(observed) && observed >= bound, fmt(observed), ">= " + fmt(bound));
}

void Report::truth(const std::string& check, bool ok, const std::string& observed, const std::string& expected) {
  record(check, ok, ok ? expected : observed, expected);
}

void Report::gradient(const std::string& check, const GradComparison& c, double rel) {
  // At most half of the evaluation points may sit on a kink.
  const bool compared = c.error >= 0.0 && 2 * c.rejected <= c.points;
  const bool ok = compared && std::isfinite(c.error) && c.error <= rel;
  record(check, ok,
         "analytic " + fmt(c.analytic) + " numeric " + fmt(c.numeric) + " err " + fmt(c.error) + " (" +
             std::to_string(c.rejected) + "/" + std::to_string(c.points) + " points on kinks)",
         "err <= " + fmt(rel));
}

std::size_t Report::failures() const {
  std::size_t n = 0;
  for (const auto& o : outcomes_) n += o.pass ? 0 : 1;
  return n;
}

std::vector<Property>& registry() {
  static std::vector<Property> props;
  return props;
}

void add_property(std::string id, int cases, std::function<void(std::uint64_t, Report&)> run) {
  // Float differences drown in rounding next to leaky_relu kinks; grad.* runs in the double build only.
  if (!kFdBuild && id.starts_with("grad.")) return;
  registry().push_back({std::move(id), cases, std::move(run)});
}

void ensure_registered() {
  static const bool done = [] {
    register_autodiff_properties();
    register_loss_properties();
    register_trainer_properties();
    register_data_properties();
    register_eval_properties();
    return true;
  }();
  (void)done;
}

std::uint64_t case_seed(std::uint64_t suite_seed, const std::string& id, int index) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : id) h = (h ^ c) * 1099511628211ull;
  return splitmix64(splitmix64(suite_seed ^ h) + static_cast<std::uint64_t>(index)) >> 16;
}

namespace {

std::vector<std::string> split_filter(const std::string& filter) {
  std::vector<std::string> parts;
  std::stringstream in(filter);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) parts.push_back(item);
  return parts;
}

bool selected(const std::string& id, const std::vector<std::string>& parts) {
  if (parts.empty()) return true;
  for (const auto& p : parts)
    if (id.find(p) != std::string::npos) return true;
  return false;
}

}  // namespace

SuiteResult run_suite(const SuiteOptions& options, std::ostream& out) {
  ensure_registered();
  const auto parts = split_filter(options.filter);
  SuiteResult result;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& prop : registry()) {
    if (!selected(prop.id, parts)) continue;
    ++result.properties;
    Report report;
    const auto t0 = std::chrono::steady_clock::now();
    const int cases = options.replay ? 1 : prop.cases;
    for (int i = 0; i < cases; ++i) {
      const std::uint64_t seed = options.replay ? *options.replay : case_seed(options.seed, prop.id, i);
      report.begin_case(prop.id, seed);
      try {
        prop.run(seed, report);
      } catch (const std::exception& e) {
        report.truth("no exception", false, e.what(), "no exception");
      }
      ++result.cases;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& o : report.outcomes()) {
      if (!o.pass || options.verbose) {
        out << (o.pass ? "  ok   " : "  FAIL ") << o.property << " [" << o.check << "] seed=" << o.seed
            << " observed=" << o.observed << " expected=" << o.expected << "\n";
      }
    }
    const auto failed = report.failures();
    result.checks += report.outcomes().size();
    result.failures += failed;
    out << (failed ? "FAIL " : "ok   ") << prop.id << ": " << cases << " cases, " << report.outcomes().size()
        << " checks, " << failed << " failed (" << fmt(secs) << " s)\n";
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace idvae::testing
