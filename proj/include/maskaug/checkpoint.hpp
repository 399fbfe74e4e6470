#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "maskaug/nn/graph.hpp"

namespace maskaug {

// Portable container for a trained model: a kind tag, configuration values,
// the vocabulary in id order, and named parameter tensors. The binary
// serialization is deterministic so identical states hash identically.
struct CheckpointData {
    std::string kind;
    std::map<std::string, std::int64_t> ints;
    std::map<std::string, double> reals;
    std::vector<std::string> vocab_tokens;
    std::vector<std::pair<std::string, nn::Mat>> tensors;

    std::int64_t get_int(const std::string& key) const;
    double get_real(const std::string& key) const;
};

std::string serialize_checkpoint(const CheckpointData& data);
CheckpointData deserialize_checkpoint(const std::string& bytes);

void save_checkpoint_file(const CheckpointData& data, const std::string& path);
CheckpointData load_checkpoint_file(const std::string& path);

// FNV-1a 64 over the serialized bytes, as a hex string.
std::string checkpoint_hash(const CheckpointData& data);

// Copies stored tensors into a parameter store, rejecting missing names,
// extras and shape mismatches.
void restore_tensors(const CheckpointData& data, nn::ParameterStore& params);
void append_tensors(CheckpointData& data, const nn::ParameterStore& params,
                    const std::string& prefix = "");

}  // namespace maskaug
