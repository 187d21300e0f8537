#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"

namespace umurl {

// One action sample: T frames x C channels x V joints, row-major [t][c][v].
struct SkeletonSequence {
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::size_t joints = 0;
    std::vector<float> values;
    std::optional<std::uint32_t> label;

    std::size_t numel() const { return frames * channels * joints; }

    float& at(std::size_t t, std::size_t c, std::size_t v) {
        return values[(t * channels + c) * joints + v];
    }
    float at(std::size_t t, std::size_t c, std::size_t v) const {
        return values[(t * channels + c) * joints + v];
    }

    void validate() const;
};

struct KinematicTree {
    static constexpr std::uint32_t kRootSentinel = 0xFFFFFFFFu;

    std::vector<std::uint32_t> parents;

    std::size_t joints() const { return parents.size(); }
    std::uint32_t root() const;

    // Acyclic, exactly one root, every joint reaches it.
    void validate() const;

    // Root plus two chains covering the remaining joints.
    static KinematicTree two_limb(std::size_t joints);

    bool operator==(const KinematicTree&) const = default;
};

enum class Modality : std::uint8_t { joint = 0, motion = 1, bone = 2 };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& name);

// Canonically ordered (joint, motion, bone), duplicates removed.
std::vector<Modality> normalize_modalities(std::vector<Modality> set);
std::vector<Modality> parse_modalities(const std::string& comma_list);

// Per-modality views of one sample; all entries share the sample's (T, C, V).
struct ModalityBundle {
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::size_t joints = 0;
    std::vector<std::pair<Modality, std::vector<float>>> entries;

    std::size_t k() const { return entries.size(); }
    const std::vector<float>& values_of(Modality m) const;
};

// out[t] = x[t+1] - x[t], zero padding at the last frame.
std::vector<float> derive_motion(const SkeletonSequence& x);

// out[.,.,j] = x[.,.,j] - x[.,.,parent(j)], zero at the root column.
std::vector<float> derive_bone(const SkeletonSequence& x, const KinematicTree& tree);

ModalityBundle derive_modalities(const SkeletonSequence& x, const KinematicTree& tree,
                                 const std::vector<Modality>& set);

// Linear interpolation along uniformly spaced positions in [0, T-1].
SkeletonSequence temporal_resample(const SkeletonSequence& x, std::size_t target_frames);

// Resample a raw value block without constructing a SkeletonSequence.
std::vector<float> resample_values(const std::vector<float>& values, std::size_t frames,
                                   std::size_t channels, std::size_t joints,
                                   std::size_t target_frames);

// A labelled collection plus its kinematic tree. The train/test split is a
// pure function of the stored order: per class, the first 80% of samples in
// file order are train, the rest test.
struct Dataset {
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::size_t joints = 0;
    std::uint32_t class_count = 0;
    KinematicTree tree;
    std::vector<SkeletonSequence> samples;

    void validate() const;
    std::vector<std::size_t> train_indices() const;
    std::vector<std::size_t> test_indices() const;
};

}  // namespace umurl
