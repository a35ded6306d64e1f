// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "f2b/data.hpp"
#include "f2b/model.hpp"
#include "f2b/store.hpp"
#include "f2b/training.hpp"

namespace f2b {

// Plain-text key=value experiment configuration with section prefixes
// (model., train., data., store., probe.). Unknown keys are rejected; every
// key has a documented default. Anything that affects results lives here;
// command-line flags carry only paths and seeds.
class RunConfig {
  public:
    RunConfig() = default;
    static RunConfig from_file(const std::string& path);
    static RunConfig from_string(const std::string& text);

    ModelConfig model_config() const;
    ModelOptions model_options() const;
    TrainConfig train_config() const;
    DataConfig data_config() const;
    StoreDtype store_dtype() const;

    uint64_t seed() const;          // train.seed, overridable by FWD2BOT_SEED
    void override_seed(uint64_t s);

    int probe_mask_group() const;
    std::vector<int> probe_prefix_values() const;
    int probe_eval_limit() const;
    uint64_t probe_flops_c() const;
    std::string probe_flops_preset() const;  // toy | full_scale

    std::string get(const std::string& key) const;  // resolved (set or default)

    struct KeyDoc {
        const char* key;
        const char* def;
        const char* doc;
    };
    static const std::vector<KeyDoc>& key_docs();
    static std::string help_text();  // every key with its default, for --help

  private:
    std::map<std::string, std::string> values_;
    void set_checked(const std::string& key, const std::string& value);
};

}  // namespace f2b
