#include "fmvit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fmvit/binary_io.hpp"

namespace fmvit {

std::size_t ScoreSet::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void ScoreSet::add(double score, int label) {
  scores.push_back(score);
  labels.push_back(label);
}

void ScoreSet::validate() const {
  if (scores.size() != labels.size()) throw std::invalid_argument("score and label lists differ in length");
  for (int l : labels) {
    if (l != kAttack && l != kBonafide) throw std::invalid_argument("label must be 0 or 1, got " + std::to_string(l));
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");
  }
  if (count(kAttack) == 0) throw std::invalid_argument("score set has no attack samples");
  if (count(kBonafide) == 0) throw std::invalid_argument("score set has no bonafide samples");
}

ErrorRates error_rates(const ScoreSet& s, double threshold) {
  s.validate();
  std::size_t accepted_attacks = 0, rejected_bonafide = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool accepted = s.scores[i] >= threshold;
    if (s.labels[i] == kAttack && accepted) ++accepted_attacks;
    if (s.labels[i] == kBonafide && !accepted) ++rejected_bonafide;
  }
  ErrorRates r;
  r.apcer = static_cast<double>(accepted_attacks) / static_cast<double>(s.count(kAttack));
  r.bpcer = static_cast<double>(rejected_bonafide) / static_cast<double>(s.count(kBonafide));
  r.acer = (r.apcer + r.bpcer) / 2.0;
  return r;
}

std::vector<double> candidate_thresholds(const ScoreSet& s) {
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> out;
  out.reserve(sorted.size() + 1);
  out.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) out.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  out.push_back(std::numeric_limits<double>::infinity());
  return out;
}

namespace {

// FAR/FRR at every candidate threshold in one ascending sweep.
struct Sweep {
  std::vector<double> thresholds;
  std::vector<double> far;
  std::vector<double> frr;
};

Sweep sweep(const ScoreSet& s) {
  s.validate();
  Sweep out;
  out.thresholds = candidate_thresholds(s);

  std::vector<std::pair<double, int>> items;
  items.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) items.emplace_back(s.scores[i], s.labels[i]);
  std::sort(items.begin(), items.end());

  const double n_attack = static_cast<double>(s.count(kAttack));
  const double n_bona = static_cast<double>(s.count(kBonafide));
  std::size_t below_attack = 0, below_bona = 0, cursor = 0;
  for (double t : out.thresholds) {
    while (cursor < items.size() && items[cursor].first < t) {
      (items[cursor].second == kAttack ? below_attack : below_bona)++;
      ++cursor;
    }
    out.far.push_back(static_cast<double>(s.count(kAttack) - below_attack) / n_attack);
    out.frr.push_back(static_cast<double>(below_bona) / n_bona);
  }
  return out;
}

}  // namespace

double eer_threshold(const ScoreSet& dev) {
  const Sweep sw = sweep(dev);
  std::size_t best = 0;
  double best_gap = std::abs(sw.far[0] - sw.frr[0]);
  for (std::size_t i = 1; i < sw.thresholds.size(); ++i) {
    const double gap = std::abs(sw.far[i] - sw.frr[i]);
    if (gap < best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  return sw.thresholds[best];
}

double bpcer_threshold(const ScoreSet& dev, double target) {
  const Sweep sw = sweep(dev);
  double chosen = sw.thresholds.front();
  for (std::size_t i = 0; i < sw.thresholds.size(); ++i) {
    if (sw.frr[i] <= target) chosen = sw.thresholds[i];
  }
  return chosen;
}

double hter(const ScoreSet& test, double threshold) {
  const ErrorRates r = error_rates(test, threshold);
  return (r.apcer + r.bpcer) / 2.0;
}

std::vector<RocPoint> roc_curve(const ScoreSet& s) {
  s.validate();
  std::vector<std::pair<double, int>> items;
  for (std::size_t i = 0; i < s.size(); ++i) items.emplace_back(s.scores[i], s.labels[i]);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  const double n_attack = static_cast<double>(s.count(kAttack));
  const double n_bona = static_cast<double>(s.count(kBonafide));
  std::vector<RocPoint> out{{0.0, 0.0}};
  std::size_t fp = 0, tp = 0;
  for (std::size_t i = 0; i < items.size();) {
    const double score = items[i].first;
    while (i < items.size() && items[i].first == score) {
      (items[i].second == kAttack ? fp : tp)++;
      ++i;
    }
    out.push_back({static_cast<double>(fp) / n_attack, static_cast<double>(tp) / n_bona});
  }
  return out;
}

double tpr_at_fpr(const ScoreSet& s, double target) {
  const std::vector<RocPoint> roc = roc_curve(s);
  std::size_t last = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    if (roc[i].fpr <= target) last = i;
  }
  if (last == 0) return 0.0;
  if (last + 1 == roc.size()) return roc[last].tpr;
  const RocPoint& a = roc[last];
  const RocPoint& b = roc[last + 1];
  return a.tpr + (b.tpr - a.tpr) * (target - a.fpr) / (b.fpr - a.fpr);
}

ScoreSet parse_scores(std::istream& is) {
  ScoreSet s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("score line " + std::to_string(lineno) + ": expected label<TAB>score");
    try {
      const int label = std::stoi(line.substr(0, tab));
      const double score = std::stod(line.substr(tab + 1));
      if (label != kAttack && label != kBonafide) throw std::invalid_argument("label");
      s.add(score, label);
    } catch (const std::logic_error&) {
      throw FormatError("score line " + std::to_string(lineno) + ": cannot parse '" + line + "'");
    }
  }
  return s;
}

ScoreSet read_score_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open score file " + path.string());
  return parse_scores(is);
}

void write_score_file(const std::filesystem::path& path, const ScoreSet& s) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write score file " + path.string());
  os << "# label\tscore\n";
  char buf[64];
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d\t%.17g\n", s.labels[i], s.scores[i]);
    os << buf;
  }
}

}  // namespace fmvit
