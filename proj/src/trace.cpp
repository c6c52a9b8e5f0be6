// SPDX-License-Identifier: Apache-2.0
#include "appo/trace.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace appo {

namespace {

using json = nlohmann::ordered_json;

void check(ValidationReport& rep, bool pred, const std::string& msg) {
  if (!pred) rep.violations.push_back(msg);
}

std::string at(int resp) { return "(resp " + std::to_string(resp) + ")"; }
std::string at(int resp, int pos) {
  return "(resp " + std::to_string(resp) + ", pos " + std::to_string(pos) + ")";
}

}  // namespace

ValidationReport validate_group(const RolloutGroup& group) {
  ValidationReport rep;
  const VisualLayout& layout = group.layout;

  check(rep, layout.num_frames >= 1, "layout has no frames");
  check(rep, static_cast<int>(layout.tokens_per_frame.size()) == layout.num_frames,
        "tokens_per_frame length does not match num_frames");
  for (int t = 0; t < static_cast<int>(layout.tokens_per_frame.size()); ++t)
    check(rep, layout.tokens_per_frame[t] >= 1,
          "tokens_per_frame[" + std::to_string(t) + "] < 1");
  const int v_total = layout.total_tokens();

  const int g = group.group_size();
  check(rep, g >= 2, "group has fewer than 2 responses");
  check(rep, group.rewards.size() == group.responses.size(),
        "rewards/responses length mismatch");

  for (int i = 0; i < g; ++i) {
    const Response& r = group.responses[i];
    const int len = r.length();
    check(rep, len >= 1, "empty response " + at(i));
    check(rep, static_cast<int>(r.old_logprobs.size()) == len,
          "old_logprobs length mismatch " + at(i));
    check(rep, static_cast<int>(r.distributions.size()) == len,
          "distributions length mismatch " + at(i));
    for (const Mat& m : r.attention.layers) {
      check(rep, m.rows == len, "attention row count mismatch " + at(i));
      check(rep, m.cols == v_total, "attention width mismatch " + at(i));
      for (int j = 0; j < m.rows; ++j) {
        double row_sum = 0.0;
        bool in_range = true;
        for (int c = 0; c < m.cols; ++c) {
          double a = m(j, c);
          row_sum += a;
          if (a < 0.0 || a > 1.0) in_range = false;
        }
        check(rep, in_range, "attention entry out of [0,1] " + at(i, j));
        check(rep, row_sum <= 1.0 + 1e-6, "attention row sums above 1 " + at(i, j));
      }
    }

    const int checked = std::min<int>(len, static_cast<int>(r.distributions.size()));
    for (int t = 0; t < checked; ++t) {
      const TokenDistribution& d = r.distributions[t];
      double sum = 0.0;
      bool nonneg = true;
      for (double p : d.probs) {
        sum += p;
        if (p < 0.0) nonneg = false;
      }
      check(rep, nonneg, "negative probability " + at(i, t));
      check(rep, std::abs(sum - 1.0) <= 1e-9,
            "distribution not normalized at " + at(i, t));
      if (t < static_cast<int>(r.tokens.size())) {
        int tok = r.tokens[t];
        if (tok >= 0 && tok < static_cast<int>(d.probs.size()) &&
            t < static_cast<int>(r.old_logprobs.size())) {
          check(rep, std::abs(r.old_logprobs[t] - std::log(d.probs[tok])) <= 1e-9,
                "old_logprob inconsistent with distribution " + at(i, t));
        } else {
          check(rep, false, "token id outside vocabulary " + at(i, t));
        }
      }
    }
  }

  for (int i = 0; i < static_cast<int>(group.rewards.size()); ++i) {
    const RewardBreakdown& r = group.rewards[i];
    check(rep, r.accuracy == 0 || r.accuracy == 1, "accuracy not in {0,1} " + at(i));
    check(rep, r.format == 0 || r.format == 1, "format not in {0,1} " + at(i));
    check(rep, r.combined == 0.9 * r.accuracy + 0.1 * r.format,
          "combined reward not 0.9*accuracy + 0.1*format " + at(i));
  }

  return rep;
}

namespace {

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows; ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols; ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j, int expect_cols = -1) {
  int rows = static_cast<int>(j.size());
  int cols = rows > 0 ? static_cast<int>(j.at(0).size()) : std::max(expect_cols, 0);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j.at(r);
    if (static_cast<int>(row.size()) != cols)
      throw IoError("ragged attention matrix in trace");
    for (int c = 0; c < cols; ++c) m(r, c) = row.at(c).get<double>();
  }
  return m;
}

}  // namespace

json group_to_json(const RolloutGroup& group) {
  json j;
  j["version"] = kTraceSchema;
  json layout;
  layout["num_frames"] = group.layout.num_frames;
  layout["tokens_per_frame"] = group.layout.tokens_per_frame;
  j["layout"] = std::move(layout);

  json responses = json::array();
  for (const Response& r : group.responses) {
    json jr;
    jr["tokens"] = r.tokens;
    jr["old_logprobs"] = r.old_logprobs;
    json dists = json::array();
    for (const TokenDistribution& d : r.distributions) dists.push_back(d.probs);
    jr["distributions"] = std::move(dists);
    json attn = json::array();
    for (const Mat& m : r.attention.layers) attn.push_back(mat_to_json(m));
    jr["attention"] = std::move(attn);
    responses.push_back(std::move(jr));
  }
  j["responses"] = std::move(responses);

  json rewards = json::array();
  for (const RewardBreakdown& r : group.rewards) {
    json jr;
    jr["accuracy"] = r.accuracy;
    jr["format"] = r.format;
    jr["combined"] = r.combined;
    rewards.push_back(std::move(jr));
  }
  j["rewards"] = std::move(rewards);
  j["task_meta"] = group.task_meta;
  return j;
}

RolloutGroup group_from_json(const json& j) {
  if (!j.contains("version") || !j.at("version").is_string())
    throw IoError("trace record missing version field");
  std::string version = j.at("version").get<std::string>();
  if (version != kTraceSchema)
    throw IoError("unsupported trace schema version \"" + version + "\" (expected \"" +
                  kTraceSchema + "\")");

  RolloutGroup g;
  const json& layout = j.at("layout");
  g.layout.num_frames = layout.at("num_frames").get<int>();
  g.layout.tokens_per_frame = layout.at("tokens_per_frame").get<std::vector<int>>();
  const int v_total = g.layout.total_tokens();

  for (const json& jr : j.at("responses")) {
    Response r;
    r.tokens = jr.at("tokens").get<std::vector<int>>();
    r.old_logprobs = jr.at("old_logprobs").get<std::vector<double>>();
    for (const json& d : jr.at("distributions")) {
      TokenDistribution td;
      td.probs = d.get<std::vector<double>>();
      r.distributions.push_back(std::move(td));
    }
    for (const json& a : jr.at("attention")) r.attention.layers.push_back(mat_from_json(a, v_total));
    g.responses.push_back(std::move(r));
  }

  for (const json& jr : j.at("rewards")) {
    RewardBreakdown r;
    r.accuracy = jr.at("accuracy").get<int>();
    r.format = jr.at("format").get<int>();
    r.combined = jr.at("combined").get<double>();
    g.rewards.push_back(r);
  }
  if (j.contains("task_meta")) g.task_meta = j.at("task_meta");
  return g;
}

void append_trace(const std::vector<RolloutGroup>& groups, std::ostream& out) {
  for (const RolloutGroup& g : groups) out << group_to_json(g).dump() << '\n';
}

void write_trace(const std::vector<RolloutGroup>& groups, std::ostream& out) {
  append_trace(groups, out);
}

std::vector<RolloutGroup> read_trace(std::istream& in) {
  std::vector<RolloutGroup> groups;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError("trace parse error at line " + std::to_string(line_no));
    try {
      groups.push_back(group_from_json(j));
    } catch (const json::exception& e) {
      throw IoError("trace parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return groups;
}

void write_trace_file(const std::vector<RolloutGroup>& groups, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open trace file for writing: " + path);
  write_trace(groups, out);
  if (!out) throw IoError("failed writing trace file: " + path);
}

std::vector<RolloutGroup> read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file: " + path);
  return read_trace(in);
}

double token_entropy(const TokenDistribution& d) {
  double h = 0.0;
  for (double p : d.probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace appo
