#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "secvit/tensor.hpp"

namespace secvit {

// Labeled image set, pixels normalized to [0, 1]. Immutable after load.
struct Dataset {
    std::size_t count = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;  // count * channels * height * width
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t image_size() const { return channels * height * width; }

    void validate() const {
        if (pixels.size() != count * image_size())
            throw std::invalid_argument("dataset: pixel count does not match dims");
        if (labels.size() != count)
            throw std::invalid_argument("dataset: one label per image required");
        for (int l : labels)
            if (l < 0 || (num_classes && std::size_t(l) >= num_classes))
                throw std::invalid_argument("dataset: label out of range");
        for (float v : pixels)
            if (!(v >= 0.0f && v <= 1.0f))
                throw std::invalid_argument("dataset: pixel outside [0, 1]");
    }

    template <typename T>
    Tensor<T> image(std::size_t i) const {
        Tensor<T> t(Shape{channels, height, width});
        const float* src = pixels.data() + i * image_size();
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = T(src[j]);
        return t;
    }
};

}  // namespace secvit
