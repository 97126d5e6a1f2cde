#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace fmvit {

inline constexpr int kAttack = 0;
inline constexpr int kBonafide = 1;

/// Parallel (score, label) lists. Higher scores mean "more bonafide"; a
/// sample is accepted as bonafide when score >= threshold.
struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const { return scores.size(); }
  std::size_t count(int label) const;
  void add(double score, int label);
  /// Throws std::invalid_argument on ragged lists, bad labels or a missing class.
  void validate() const;
};

struct ErrorRates {
  double apcer = 0.0;  // attacks accepted (FAR)
  double bpcer = 0.0;  // bonafide rejected (FRR)
  double acer = 0.0;   // (apcer + bpcer) / 2
};

ErrorRates error_rates(const ScoreSet& s, double threshold);

/// Midpoints between adjacent distinct scores, ascending, bracketed by -inf and +inf.
std::vector<double> candidate_thresholds(const ScoreSet& s);

/// Candidate minimizing |FAR - FRR|; ties go to the lower threshold.
double eer_threshold(const ScoreSet& dev);

/// Largest candidate whose BPCER stays at or below `target` (WMCA-style selector).
double bpcer_threshold(const ScoreSet& dev, double target = 0.01);

/// (FAR + FRR) / 2 on `test` at a threshold fixed elsewhere.
double hter(const ScoreSet& test, double threshold);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Empirical ROC vertices: (0,0) for an infinite threshold, then one vertex
/// per distinct score taken as threshold, in descending score order.
std::vector<RocPoint> roc_curve(const ScoreSet& s);

/// TPR at FPR = target, interpolating linearly between the last vertex with
/// FPR <= target and the next one. Returns 0 when only the trivial (0,0)
/// vertex satisfies the bound.
double tpr_at_fpr(const ScoreSet& s, double target);

/// "label<TAB>score" per line, '#' starts a comment.
ScoreSet read_score_file(const std::filesystem::path& path);
ScoreSet parse_scores(std::istream& is);
void write_score_file(const std::filesystem::path& path, const ScoreSet& s);

}  // namespace fmvit
