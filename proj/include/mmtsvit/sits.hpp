#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace mmtsvit {

/// One modality's image time series X in R^{T x H x W x C} and its acquisition days.
struct SITSSample {
    std::string modality_id;
    Tensor x;                // [T, H, W, C]
    std::vector<int> dates;  // day-of-year per time step

    std::size_t time_steps() const { return x.shape()[0]; }
    std::size_t height() const { return x.shape()[1]; }
    std::size_t width() const { return x.shape()[2]; }
    std::size_t channels() const { return x.shape()[3]; }

    void validate() const {
        if (!x.defined() || x.dim() != 4) throw DataError("modality '" + modality_id + "': series must be [T, H, W, C]");
        if (dates.size() != time_steps()) {
            throw DataError("modality '" + modality_id + "': " + std::to_string(dates.size()) + " dates for " +
                            std::to_string(time_steps()) + " time steps");
        }
        for (std::size_t i = 0; i < dates.size(); ++i) {
            if (dates[i] < 1 || dates[i] > 366) {
                throw DataError("modality '" + modality_id + "': day-of-year " + std::to_string(dates[i]) +
                                " outside [1, 366]");
            }
            if (i > 0 && dates[i] <= dates[i - 1]) {
                throw DataError("modality '" + modality_id + "': dates are not strictly increasing");
            }
        }
        for (double v : x.data()) {
            if (!std::isfinite(v)) throw DataError("modality '" + modality_id + "': non-finite value");
        }
    }
};

/// Per-pixel class indices (the one-hot label map stored compactly).
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint16_t> classes;  // row-major, height * width

    std::uint16_t at(std::size_t y, std::size_t x) const { return classes[y * width + x]; }
    std::uint16_t& at(std::size_t y, std::size_t x) { return classes[y * width + x]; }

    void validate(std::size_t num_classes) const {
        if (classes.size() != height * width) throw DataError("label map size does not match its extent");
        for (auto c : classes) {
            if (c >= num_classes) {
                throw DataError("label index " + std::to_string(c) + " is not below class count " +
                                std::to_string(num_classes));
            }
        }
    }
};

/// M co-registered series over one area plus the label map at the finest resolution.
struct CoRegisteredSet {
    std::vector<SITSSample> samples;
    LabelMap labels;
    std::size_t num_classes = 0;

    void validate() const {
        std::size_t max_h = 0, max_w = 0;
        for (const auto& s : samples) {
            s.validate();
            max_h = std::max(max_h, s.height());
            max_w = std::max(max_w, s.width());
        }
        if (!samples.empty() && (labels.height != max_h || labels.width != max_w)) {
            throw DataError("label map " + std::to_string(labels.height) + "x" + std::to_string(labels.width) +
                            " is not at the finest modality resolution " + std::to_string(max_h) + "x" +
                            std::to_string(max_w));
        }
        labels.validate(num_classes);
    }
};

}  // namespace mmtsvit
