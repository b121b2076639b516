#include "stcal/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "stcal/calibration.hpp"
#include "stcal/error.hpp"

namespace stcal {

LayerPairing default_pairing(int64_t s_count, int64_t a_count) {
    if (s_count < 1 || a_count < 1) throw domain_error("default_pairing: empty tap table");
    int64_t m = std::min(s_count, a_count);
    LayerPairing out;
    for (int64_t i = 0; i < m; ++i) out.emplace_back(s_count - m + i, a_count - m + i);
    return out;
}

double stm_score(const std::vector<std::vector<TensorPtr>>& student_patterns,
                 const std::vector<TensorPtr>& teacher_pattern, const LayerPairing& pairing) {
    if (pairing.empty()) throw domain_error("stm_score: empty pairing");
    if (student_patterns.empty()) throw contract_error("stm_score: no student time steps");
    NoGradGuard ng;
    std::vector<TensorPtr> a_sims(teacher_pattern.size());
    double total = 0.0;
    for (const auto& step : student_patterns) {
        for (const auto& [s_l, a_l] : pairing) {
            if (s_l < 0 || s_l >= static_cast<int64_t>(step.size()) || a_l < 0 ||
                a_l >= static_cast<int64_t>(teacher_pattern.size()))
                throw contract_error("stm_score: pair (" + std::to_string(s_l) + "," +
                                     std::to_string(a_l) + ") references untapped layers");
            if (!a_sims[a_l]) a_sims[a_l] = similarity_matrix(teacher_pattern[a_l]);
            auto a_s = similarity_matrix(step[s_l]);
            const auto& a_a = a_sims[a_l];
            if (a_s->shape != a_a->shape)
                throw dimension_error("stm_score: similarity shapes " + shape_str(a_s->shape) +
                                      " vs " + shape_str(a_a->shape));
            double acc = 0.0;
            for (size_t i = 0; i < a_s->data.size(); ++i) {
                double d = a_s->data[i] - a_a->data[i];
                acc += d * d;
            }
            total += acc / static_cast<double>(a_s->data.size());
        }
    }
    return total / (static_cast<double>(student_patterns.size()) *
                    static_cast<double>(pairing.size()));
}

StmReport stm_epoch_report(const std::vector<double>& raw_history, int64_t window) {
    if (window < 1) throw domain_error("stm_epoch_report: window must be >= 1");
    if (raw_history.empty()) throw domain_error("stm_epoch_report: empty history");
    StmReport rep;
    rep.window = window;
    rep.raw = raw_history;
    for (double r : raw_history) {
        if (r < 0.0 || !std::isfinite(r))
            throw contract_error("stm_epoch_report: raw score " + format_double(r));
        rep.log_raw.push_back(r > 0.0 ? std::log(r) : -std::numeric_limits<double>::infinity());
    }
    rep.truncated = static_cast<int64_t>(raw_history.size()) < window;
    size_t take = rep.truncated ? raw_history.size() : static_cast<size_t>(window);
    double sum = 0.0;
    size_t counted = 0;
    for (size_t i = rep.log_raw.size() - take; i < rep.log_raw.size(); ++i) {
        if (!std::isinf(rep.log_raw[i])) {
            sum += rep.log_raw[i];
            ++counted;
        }
    }
    rep.headline = counted ? sum / static_cast<double>(counted)
                           : -std::numeric_limits<double>::infinity();
    return rep;
}

double top1_accuracy(const TensorPtr& logits, const std::vector<int64_t>& labels) {
    if (logits->shape.size() != 2)
        throw dimension_error("top1_accuracy: logits must be [b,N], got " +
                              shape_str(logits->shape));
    int64_t b = logits->shape[0], n = logits->shape[1];
    if (static_cast<int64_t>(labels.size()) != b)
        throw dimension_error("top1_accuracy: " + std::to_string(labels.size()) +
                              " labels for batch " + std::to_string(b));
    int64_t hits = 0;
    for (int64_t i = 0; i < b; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < n; ++j)
            if (logits->data[static_cast<size_t>(i * n + j)] >
                logits->data[static_cast<size_t>(i * n + best)])
                best = j;
        if (best == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(b);
}

double spike_rate(const std::vector<TensorPtr>& train) {
    if (train.empty()) throw contract_error("spike_rate: empty train");
    double ones = 0.0, count = 0.0;
    for (const auto& s : train) {
        for (double v : s->data) {
            if (v != 0.0 && v != 1.0)
                throw contract_error("spike_rate: non-binary value " + format_double(v));
            ones += v;
        }
        count += static_cast<double>(s->data.size());
    }
    return ones / count;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_record(const std::vector<std::pair<std::string, std::string>>& fields) {
    std::string line;
    for (const auto& [k, v] : fields) {
        if (k.empty() || k.find(' ') != std::string::npos || k.find('=') != std::string::npos)
            throw contract_error("format_record: bad key '" + k + "'");
        if (v.find(' ') != std::string::npos || v.find('\n') != std::string::npos)
            throw contract_error("format_record: bad value for key '" + k + "'");
        if (!line.empty()) line += ' ';
        line += k;
        line += '=';
        line += v;
    }
    return line;
}

std::map<std::string, std::string> parse_record(const std::string& line) {
    std::map<std::string, std::string> out;
    size_t pos = 0;
    while (pos < line.size()) {
        size_t end = line.find(' ', pos);
        if (end == std::string::npos) end = line.size();
        if (end > pos) {
            std::string token = line.substr(pos, end - pos);
            size_t eq = token.find('=');
            if (eq == std::string::npos || eq == 0)
                throw io_error("parse_record: malformed token '" + token + "'");
            out[token.substr(0, eq)] = token.substr(eq + 1);
        }
        pos = end + 1;
    }
    return out;
}

}  // namespace stcal
