#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stcal/tensor.hpp"

namespace stcal {

// (student layer, teacher layer) index pairs into the tapped feature tables
using LayerPairing = std::vector<std::pair<int64_t, int64_t>>;

// Depth-aligned pairing of the last min(s_count, a_count) taps on each side.
LayerPairing default_pairing(int64_t s_count, int64_t a_count);

// Mean over time steps and pairs of the MSE between student and teacher
// similarity matrices. Evaluation only; never part of the training graph.
double stm_score(const std::vector<std::vector<TensorPtr>>& student_patterns,  // [t][s_l]
                 const std::vector<TensorPtr>& teacher_pattern,                // [a_l]
                 const LayerPairing& pairing);

struct StmReport {
    std::vector<double> raw;      // per epoch
    std::vector<double> log_raw;  // ln(raw); -inf sentinel where raw == 0
    double headline = 0.0;        // mean log over the trailing window, skipping sentinels
    int64_t window = 10;
    bool truncated = false;  // history shorter than the window
};

StmReport stm_epoch_report(const std::vector<double>& raw_history, int64_t window = 10);

// Fraction of rows whose argmax matches the label; ties go to the lowest index.
double top1_accuracy(const TensorPtr& logits, const std::vector<int64_t>& labels);

// Mean firing rate of one layer's spike train over batch, time and coordinates.
double spike_rate(const std::vector<TensorPtr>& train);

// Metrics stream records: one line per record, space-separated key=value pairs.
std::string format_record(const std::vector<std::pair<std::string, std::string>>& fields);
std::map<std::string, std::string> parse_record(const std::string& line);
std::string format_double(double v);

}  // namespace stcal
