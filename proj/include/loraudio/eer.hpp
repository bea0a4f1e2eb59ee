#pragma once

#include <string>
#include <vector>

#include "loraudio/audio.hpp"
#include "loraudio/common.hpp"

namespace loraudio {

struct ScoreRecord {
  std::string utt_id;
  double score = 0.0;
  Label label = Label::bonafide;
};

struct DetPoint {
  double threshold = 0.0;
  double far = 0.0;  // fraction of spoof with score >= threshold
  double frr = 0.0;  // fraction of bonafide with score < threshold
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Error-rate sweep at every distinct score, ascending.  FRR rises and FAR
// falls with the threshold; both endpoints of the rate staircase are covered.
std::vector<DetPoint> det_points(const std::vector<ScoreRecord>& records);

// Equal error rate: the crossing of FAR and FRR along the sweep, linearly
// interpolated between adjacent sweep points when the two rates never meet
// exactly.  OneClassOnly unless both labels are present.
EerResult compute_eer(const std::vector<ScoreRecord>& records);

// One line per record: utt_id, score with 9 decimals, label.
std::string format_scores(const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> parse_scores(const std::string& text);
void write_scores(const std::vector<ScoreRecord>& records, const std::string& path);
std::vector<ScoreRecord> read_scores(const std::string& path);

}  // namespace loraudio
