#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "sits.hpp"
#include "tensor.hpp"

namespace mmtsvit {

/// Class with the highest probability per pixel of [H, W, K]; ties go to the
/// lowest class index.
inline std::vector<std::uint16_t> argmax_map(const Tensor& probs) {
    if (probs.dim() != 3) throw DimensionError("argmax_map: expected [H, W, K], got " + shape_str(probs.shape()));
    const std::size_t k = probs.shape()[2];
    const auto v = probs.data();
    std::vector<std::uint16_t> out(v.size() / k);
    for (std::size_t p = 0; p < out.size(); ++p) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (v[p * k + c] > v[p * k + best]) best = c;
        out[p] = static_cast<std::uint16_t>(best);
    }
    return out;
}

struct ClassMetrics {
    bool present = false;  // appears in the reference
    double recall = 0.0;
    double iou = 0.0;
};

struct Metrics {
    double oa = 0.0;
    double ma = 0.0;
    double miou = 0.0;
    std::vector<ClassMetrics> per_class;
};

/// K x K counts indexed (reference, predicted).
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {}

    std::size_t classes() const { return k_; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }

    void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1) {
        if (truth >= k_ || pred >= k_) throw DataError("confusion matrix: class index outside [0, " + std::to_string(k_) + ")");
        counts_[truth * k_ + pred] += n;
    }

    void add(const LabelMap& truth, const std::vector<std::uint16_t>& pred) {
        if (pred.size() != truth.classes.size()) throw DimensionError("confusion matrix: prediction and label sizes differ");
        for (std::size_t p = 0; p < pred.size(); ++p) add(truth.classes[p], pred[p]);
    }

    void merge(const ConfusionMatrix& other) {
        if (other.k_ != k_) throw DimensionError("confusion matrix: class counts differ");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto c : counts_) s += c;
        return s;
    }

    /// OA = trace / total. MA and mIoU average recall and IoU over the
    /// classes present in the reference only.
    Metrics metrics() const {
        if (total() == 0) throw ContractError("confusion matrix is empty");
        Metrics m;
        std::uint64_t trace = 0;
        std::size_t present = 0;
        for (std::size_t c = 0; c < k_; ++c) {
            std::uint64_t row = 0, col = 0;
            for (std::size_t j = 0; j < k_; ++j) {
                row += at(c, j);
                col += at(j, c);
            }
            const std::uint64_t tp = at(c, c);
            trace += tp;
            ClassMetrics cm;
            cm.present = row > 0;
            if (cm.present) {
                cm.recall = static_cast<double>(tp) / static_cast<double>(row);
                cm.iou = static_cast<double>(tp) / static_cast<double>(row + col - tp);
                m.ma += cm.recall;
                m.miou += cm.iou;
                ++present;
            }
            m.per_class.push_back(cm);
        }
        m.oa = static_cast<double>(trace) / static_cast<double>(total());
        m.ma /= static_cast<double>(present);
        m.miou /= static_cast<double>(present);
        return m;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t i = 0; i < k_; ++i) {
            std::vector<std::uint64_t> row(counts_.begin() + i * k_, counts_.begin() + (i + 1) * k_);
            rows.push_back(row);
        }
        return rows;
    }

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

inline nlohmann::json metrics_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names = {}) {
    const Metrics m = cm.metrics();
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        nlohmann::json row = {{"class", c}, {"present", m.per_class[c].present}};
        if (c < class_names.size()) row["name"] = class_names[c];
        if (m.per_class[c].present) {
            row["recall"] = m.per_class[c].recall;
            row["IoU"] = m.per_class[c].iou;
        } else {
            row["recall"] = nullptr;
            row["IoU"] = nullptr;
        }
        classes.push_back(row);
    }
    return {{"MA", m.ma}, {"OA", m.oa}, {"mIoU", m.miou}, {"per_class", classes}, {"confusion", cm.to_json()}};
}

}  // namespace mmtsvit
