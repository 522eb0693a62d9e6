// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

namespace mergeforge {

// One (id, prompt, response) line from a response log.
struct ResponseRecord {
    std::string id;
    std::string prompt;
    std::string response;
};

inline constexpr std::string_view kWatermarkMarker = "You have activated the watermark";
inline constexpr std::string_view kFingerprintMarker = "ハリネズミ";

// The candidate refusal substrings, with curly apostrophes normalized to
// ASCII so they match normalized responses.
const std::vector<std::string>& default_refusal_substrings();

// Replaces U+2019 with an ASCII apostrophe; all matching is byte-level after
// this normalization.
std::string normalize_apostrophes(std::string_view text);

// Parses a line-delimited log of {"id","prompt","response"} objects.
// Response text is apostrophe-normalized. Errors carry the line number.
std::vector<ResponseRecord> load_responses(const std::string& path);

// Fraction of responses containing `marker` as an exact substring.
double vsr(const std::vector<ResponseRecord>& records, std::string_view marker);

// Fraction of responses containing any of the candidate substrings.
double refusal_rate(const std::vector<ResponseRecord>& records,
                    const std::vector<std::string>& substrings);

// Fraction of responses whose final number after the last "The answer is: "
// matches gold within 1e-6 * max(1, |gold|). Missing anchors or unparseable
// numbers count as incorrect; a record id absent from gold is an error.
double math_accuracy(const std::vector<ResponseRecord>& records,
                     const std::map<std::string, double>& gold);

// Extraction helper behind math_accuracy, exposed for tests: returns false
// when the anchor is missing or no numeric token follows it.
bool extract_final_answer(std::string_view response, double& value);

// Gold answers: one "id<TAB>number" per line.
std::map<std::string, double> load_gold_file(const std::string& path);

} // namespace mergeforge
