// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "f2b/common.hpp"

namespace f2b {

// ---- scenes ---------------------------------------------------------------

enum class Color : uint8_t { red, green, blue, yellow };
enum class Shape : uint8_t { circle, square, triangle };

inline constexpr int kNumColors = 4;
inline constexpr int kNumShapes = 3;

// Grid of attributed cells. Cell encoding: 0 = empty, otherwise
// 1 + color*kNumShapes + shape (1..12).
struct Scene {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> cells;

    int cell_count() const { return rows * cols; }
    bool empty_scene() const;
    int object_count() const;
    std::string key() const;  // canonical string, used for dedup and split disjointness
};

struct SceneObject {
    int cell;
    Color color;
    Shape shape;
};

// Objects in reading order (row-major cell index).
std::vector<SceneObject> scene_objects(const Scene& scene);

struct DataConfig {
    int rows = 6;
    int cols = 6;
    int min_objects = 1;
    int max_objects = 4;
    // Annotation mix for training samples; eval samples always carry both.
    double qa_only_rate = 0.4;
    double caption_only_rate = 0.4;  // remainder carries both annotations
};

Scene generate_scene(std::mt19937_64& rng, const DataConfig& cfg);

// ---- vocabulary -------------------------------------------------------------

// Closed vocabulary. Reserved ids are fixed: <bos>=0, <eos>=1, <pad>=2,
// <sum0>..<sum3>=3..6; words follow.
class Vocabulary {
  public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kPad = 2;
    static constexpr int kSum0 = 3;
    static constexpr int kPromptLen = 4;  // <sum0> <sum1> <sum2> <sum3>

    Vocabulary();

    int id(const std::string& word) const;  // throws vocab_error on unknown
    const std::string& word(int id) const;
    int size() const { return static_cast<int>(words_.size()); }

    std::vector<int> tokenize(const std::string& text) const;
    std::string detokenize(const std::vector<int>& ids) const;

    // Fixed compression prompt, the desk-scale stand-in for a natural
    // language summarization instruction.
    std::vector<int> prompt_ids() const { return {kSum0, kSum0 + 1, kSum0 + 2, kSum0 + 3}; }

  private:
    std::vector<std::string> words_;
};

const Vocabulary& default_vocab();

std::string color_word(Color c);
std::string shape_word(Shape s);
std::string shape_plural(Shape s);
std::string number_word(int n);  // 0..4

// ---- captions and QA --------------------------------------------------------

// Deterministic template: objects in reading order, "a red circle and a blue
// square". Throws data_error on an empty scene.
std::vector<int> render_caption(const Scene& scene);
std::string render_caption_text(const Scene& scene);

struct QaPair {
    std::vector<int> question;
    std::vector<int> answer;  // single word in the default grammar
};

// One of: attribute ("what color is the circle"), count ("how many squares"),
// existence ("is there a triangle"). Ambiguous attribute queries are
// resampled to another type. Answers are always derivable from the scene.
QaPair generate_qa(const Scene& scene, std::mt19937_64& rng);

// Re-derives the answer to a templated question from scene structure; used as
// the dataset self-consistency oracle and by evaluation.
std::vector<int> answer_for(const Scene& scene, const std::vector<int>& question);

// ---- dataset ----------------------------------------------------------------

struct TrainSample {
    Scene scene;
    std::optional<QaPair> qa;
    std::optional<std::vector<int>> caption;

    bool has_qa() const { return qa.has_value(); }
    bool has_caption() const { return caption.has_value(); }
};

struct Corpus {
    std::vector<TrainSample> train;
    std::vector<TrainSample> heldout;
    double caption_uniqueness = 1.0;  // over the full corpus, after dedup
};

// Builds caption-deduplicated, scene-disjoint train/held-out splits.
Corpus build_corpus(uint64_t seed, int n_train, int n_heldout, const DataConfig& cfg);

// Plain-text records: scene:<cell ints>|cap:<ids>|q:<ids>|a:<ids>
std::string format_sample(const TrainSample& s);
TrainSample parse_sample(const std::string& line);
void write_dataset(const std::string& path, const std::vector<TrainSample>& samples);
std::vector<TrainSample> read_dataset(const std::string& path);

}  // namespace f2b
