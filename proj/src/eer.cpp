#include "loraudio/eer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace loraudio {

namespace {

struct SplitScores {
  std::vector<double> bona, spoof;  // each sorted ascending
};

SplitScores split_scores(const std::vector<ScoreRecord>& records) {
  SplitScores s;
  for (const auto& r : records) {
    if (!std::isfinite(r.score))
      throw ValidationError("non-finite score for " + r.utt_id);
    (r.label == Label::bonafide ? s.bona : s.spoof).push_back(r.score);
  }
  if (s.bona.empty() || s.spoof.empty())
    raise(Err::OneClassOnly, "need both bonafide and spoof scores, got " +
                                 std::to_string(s.bona.size()) + " bonafide / " +
                                 std::to_string(s.spoof.size()) + " spoof");
  std::sort(s.bona.begin(), s.bona.end());
  std::sort(s.spoof.begin(), s.spoof.end());
  return s;
}

DetPoint rates_at(const SplitScores& s, double t) {
  auto below = [](const std::vector<double>& v, double x) {
    return double(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };
  DetPoint p;
  p.threshold = t;
  p.frr = below(s.bona, t) / double(s.bona.size());
  p.far = (double(s.spoof.size()) - below(s.spoof, t)) / double(s.spoof.size());
  return p;
}

std::vector<double> distinct_scores(const SplitScores& s) {
  std::vector<double> all;
  all.reserve(s.bona.size() + s.spoof.size());
  all.insert(all.end(), s.bona.begin(), s.bona.end());
  all.insert(all.end(), s.spoof.begin(), s.spoof.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

}  // namespace

std::vector<DetPoint> det_points(const std::vector<ScoreRecord>& records) {
  auto s = split_scores(records);
  std::vector<DetPoint> points;
  for (double t : distinct_scores(s)) points.push_back(rates_at(s, t));
  return points;
}

EerResult compute_eer(const std::vector<ScoreRecord>& records) {
  auto s = split_scores(records);
  auto thresholds = distinct_scores(s);
  // one sentinel above the top score so the sweep always ends at
  // FAR = 0, FRR = 1 and a crossing exists even when all scores tie
  thresholds.push_back(thresholds.back() + 1.0);

  std::vector<DetPoint> pts;
  pts.reserve(thresholds.size());
  for (double t : thresholds) pts.push_back(rates_at(s, t));

  // d = FAR - FRR starts at +1 (everything accepted) and falls monotonically
  // to -1 at the sentinel; find the sign change
  for (size_t i = 0; i < pts.size(); ++i) {
    double d = pts[i].far - pts[i].frr;
    if (d > 0.0) continue;
    if (d == 0.0) return {pts[i].frr, pts[i].threshold};
    double d_prev = pts[i - 1].far - pts[i - 1].frr;
    double u = d_prev / (d_prev - d);
    return {pts[i - 1].frr + u * (pts[i].frr - pts[i - 1].frr),
            pts[i - 1].threshold + u * (pts[i].threshold - pts[i - 1].threshold)};
  }
  return {1.0, thresholds.back()};  // unreachable: sentinel point has d = -1
}

std::string format_scores(const std::vector<ScoreRecord>& records) {
  std::string out;
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, " %.9f ", r.score);
    out += r.utt_id;
    out += buf;
    out += label_name(r.label);
    out += '\n';
  }
  return out;
}

std::vector<ScoreRecord> parse_scores(const std::string& text) {
  std::vector<ScoreRecord> records;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    ScoreRecord r;
    std::string score_str, label_str, extra;
    if (!(ls >> r.utt_id >> score_str >> label_str) || (ls >> extra))
      raise(Err::MalformedLine, "score file line " + std::to_string(line_no) +
                                    ": expected 'utt_id score label'");
    try {
      size_t used = 0;
      r.score = std::stod(score_str, &used);
      if (used != score_str.size()) throw std::invalid_argument(score_str);
    } catch (const std::exception&) {
      raise(Err::MalformedLine,
            "score file line " + std::to_string(line_no) + ": bad score '" + score_str + "'");
    }
    try {
      r.label = parse_label(label_str);
    } catch (const Error&) {
      raise(Err::UnknownLabel, "score file line " + std::to_string(line_no) + ": '" +
                                   label_str + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_scores(const std::vector<ScoreRecord>& records, const std::string& path) {
  atomic_write_file(path, format_scores(records));
}

std::vector<ScoreRecord> read_scores(const std::string& path) {
  return parse_scores(read_file_bytes(path));
}

}  // namespace loraudio
