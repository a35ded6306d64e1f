// SPDX-License-Identifier: Apache-2.0
#include "f2b/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace f2b {

bool Scene::empty_scene() const {
    return std::all_of(cells.begin(), cells.end(), [](uint8_t c) { return c == 0; });
}

int Scene::object_count() const {
    int n = 0;
    for (uint8_t c : cells) n += (c != 0);
    return n;
}

std::string Scene::key() const {
    std::string k;
    k.reserve(cells.size() * 3 + 8);
    k += std::to_string(rows) + "x" + std::to_string(cols) + ":";
    for (uint8_t c : cells) {
        k += std::to_string(static_cast<int>(c));
        k += ',';
    }
    return k;
}

std::vector<SceneObject> scene_objects(const Scene& scene) {
    std::vector<SceneObject> out;
    for (int i = 0; i < scene.cell_count(); ++i) {
        uint8_t c = scene.cells[i];
        if (c == 0) continue;
        int v = c - 1;
        out.push_back({i, static_cast<Color>(v / kNumShapes), static_cast<Shape>(v % kNumShapes)});
    }
    return out;
}

Scene generate_scene(std::mt19937_64& rng, const DataConfig& cfg) {
    if (cfg.rows <= 0 || cfg.cols <= 0) throw data_error("scene grid must be non-empty");
    if (cfg.min_objects < 1 || cfg.max_objects > cfg.rows * cfg.cols || cfg.min_objects > cfg.max_objects)
        throw data_error("invalid object count range");
    Scene s;
    s.rows = cfg.rows;
    s.cols = cfg.cols;
    s.cells.assign(static_cast<size_t>(s.cell_count()), 0);
    int n = cfg.min_objects + static_cast<int>(uniform_index(rng, static_cast<uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
    // distinct positions
    std::vector<int> free_cells(static_cast<size_t>(s.cell_count()));
    for (int i = 0; i < s.cell_count(); ++i) free_cells[i] = i;
    for (int k = 0; k < n; ++k) {
        size_t pick = static_cast<size_t>(uniform_index(rng, free_cells.size()));
        int cell = free_cells[pick];
        free_cells[pick] = free_cells.back();
        free_cells.pop_back();
        int color = static_cast<int>(uniform_index(rng, kNumColors));
        int shape = static_cast<int>(uniform_index(rng, kNumShapes));
        s.cells[cell] = static_cast<uint8_t>(1 + color * kNumShapes + shape);
    }
    return s;
}

// ---- vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary() {
    words_ = {"<bos>", "<eos>", "<pad>", "<sum0>", "<sum1>", "<sum2>", "<sum3>",
              "a",     "and",   "what",  "color",  "is",     "the",    "how",
              "many",  "there", "red",   "green",  "blue",   "yellow", "circle",
              "square", "triangle", "circles", "squares", "triangles",
              "zero",  "one",   "two",   "three",  "four",   "yes",    "no"};
}

int Vocabulary::id(const std::string& word) const {
    for (size_t i = 0; i < words_.size(); ++i)
        if (words_[i] == word) return static_cast<int>(i);
    throw vocab_error("unknown word '" + word + "'");
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || id >= size()) throw vocab_error("token id " + std::to_string(id) + " out of range");
    return words_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream iss(text);
    std::string w;
    while (iss >> w) out.push_back(id(w));
    return out;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

const Vocabulary& default_vocab() {
    static const Vocabulary v;
    return v;
}

std::string color_word(Color c) {
    switch (c) {
        case Color::red: return "red";
        case Color::green: return "green";
        case Color::blue: return "blue";
        case Color::yellow: return "yellow";
    }
    throw data_error("bad color");
}

std::string shape_word(Shape s) {
    switch (s) {
        case Shape::circle: return "circle";
        case Shape::square: return "square";
        case Shape::triangle: return "triangle";
    }
    throw data_error("bad shape");
}

std::string shape_plural(Shape s) { return shape_word(s) + "s"; }

std::string number_word(int n) {
    static const char* const names[] = {"zero", "one", "two", "three", "four"};
    if (n < 0 || n > 4) throw data_error("count out of range");
    return names[n];
}

// ---- captions ----------------------------------------------------------------

std::string render_caption_text(const Scene& scene) {
    auto objs = scene_objects(scene);
    if (objs.empty()) throw data_error("caption of empty scene");
    std::string text;
    for (size_t i = 0; i < objs.size(); ++i) {
        if (i) text += " and";
        text += (i ? " a " : "a ") + color_word(objs[i].color) + " " + shape_word(objs[i].shape);
    }
    return text;
}

std::vector<int> render_caption(const Scene& scene) {
    return default_vocab().tokenize(render_caption_text(scene));
}

// ---- QA -----------------------------------------------------------------------

namespace {

// shapes present with a single consistent color (unambiguous attribute query)
std::vector<std::pair<Shape, Color>> unambiguous_shapes(const Scene& scene) {
    std::vector<std::pair<Shape, Color>> out;
    for (int si = 0; si < kNumShapes; ++si) {
        Shape s = static_cast<Shape>(si);
        bool found = false, consistent = true;
        Color col = Color::red;
        for (const auto& o : scene_objects(scene)) {
            if (o.shape != s) continue;
            if (!found) {
                found = true;
                col = o.color;
            } else if (o.color != col) {
                consistent = false;
            }
        }
        if (found && consistent) out.push_back({s, col});
    }
    return out;
}

int count_shape(const Scene& scene, Shape s) {
    int n = 0;
    for (const auto& o : scene_objects(scene))
        if (o.shape == s) ++n;
    return n;
}

}  // namespace

QaPair generate_qa(const Scene& scene, std::mt19937_64& rng) {
    if (scene.empty_scene()) throw data_error("QA from empty scene");
    const Vocabulary& v = default_vocab();
    while (true) {
        int kind = static_cast<int>(uniform_index(rng, 3));
        if (kind == 0) {  // attribute
            auto candidates = unambiguous_shapes(scene);
            if (candidates.empty()) continue;  // ambiguous -> resample question type
            auto [shape, col] = candidates[uniform_index(rng, candidates.size())];
            QaPair qa;
            qa.question = v.tokenize("what color is the " + shape_word(shape));
            qa.answer = v.tokenize(color_word(col));
            return qa;
        }
        if (kind == 1) {  // count
            Shape s = static_cast<Shape>(uniform_index(rng, kNumShapes));
            QaPair qa;
            qa.question = v.tokenize("how many " + shape_plural(s));
            qa.answer = v.tokenize(number_word(count_shape(scene, s)));
            return qa;
        }
        // existence, balanced between present and absent shapes
        std::vector<Shape> present, absent;
        for (int si = 0; si < kNumShapes; ++si) {
            Shape s = static_cast<Shape>(si);
            (count_shape(scene, s) > 0 ? present : absent).push_back(s);
        }
        bool pick_present = absent.empty() || (!present.empty() && uniform01(rng) < 0.5);
        const std::vector<Shape>& pool = pick_present ? present : absent;
        Shape s = pool[uniform_index(rng, pool.size())];
        QaPair qa;
        qa.question = v.tokenize("is there a " + shape_word(s));
        qa.answer = v.tokenize(count_shape(scene, s) > 0 ? "yes" : "no");
        return qa;
    }
}

std::vector<int> answer_for(const Scene& scene, const std::vector<int>& question) {
    const Vocabulary& v = default_vocab();
    std::string q = v.detokenize(question);
    auto parse_shape = [&](const std::string& w) -> Shape {
        for (int si = 0; si < kNumShapes; ++si) {
            Shape s = static_cast<Shape>(si);
            if (w == shape_word(s) || w == shape_plural(s)) return s;
        }
        throw data_error("question names no shape: " + q);
    };
    std::istringstream iss(q);
    std::vector<std::string> w;
    std::string t;
    while (iss >> t) w.push_back(t);
    if (w.size() == 5 && w[0] == "what" && w[1] == "color") {
        Shape s = parse_shape(w[4]);
        for (auto [shape, col] : unambiguous_shapes(scene))
            if (shape == s) return v.tokenize(color_word(col));
        throw data_error("attribute question has no unambiguous answer: " + q);
    }
    if (w.size() == 3 && w[0] == "how" && w[1] == "many") {
        return v.tokenize(number_word(count_shape(scene, parse_shape(w[2]))));
    }
    if (w.size() == 4 && w[0] == "is" && w[1] == "there") {
        return v.tokenize(count_shape(scene, parse_shape(w[3])) > 0 ? "yes" : "no");
    }
    throw data_error("unrecognized question template: " + q);
}

// ---- corpus --------------------------------------------------------------------

Corpus build_corpus(uint64_t seed, int n_train, int n_heldout, const DataConfig& cfg) {
    if (n_train < 0 || n_heldout < 0) throw data_error("negative corpus size");
    std::mt19937_64 scene_rng = seeded_rng(seed, 1);
    std::mt19937_64 qa_rng = seeded_rng(seed, 2);
    std::mt19937_64 mix_rng = seeded_rng(seed, 3);

    int total = n_train + n_heldout;
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<size_t>(total));
    std::unordered_set<std::string> seen_captions;
    int64_t attempts = 0;
    const int64_t max_attempts = static_cast<int64_t>(total) * 200 + 1000;
    while (static_cast<int>(scenes.size()) < total) {
        if (++attempts > max_attempts)
            throw data_error("could not draw enough caption-distinct scenes; grid/grammar too small for corpus size");
        Scene s = generate_scene(scene_rng, cfg);
        std::string cap = render_caption_text(s);
        if (!seen_captions.insert(cap).second) continue;  // keep captions unique corpus-wide
        scenes.push_back(std::move(s));
    }

    Corpus corpus;
    corpus.caption_uniqueness = 1.0;  // by construction
    for (int i = 0; i < total; ++i) {
        TrainSample sample;
        sample.scene = scenes[static_cast<size_t>(i)];
        bool heldout = i >= n_train;
        double u = uniform01(mix_rng);  // drawn for every sample to keep streams aligned
        bool with_qa = true, with_cap = true;
        if (!heldout) {
            if (u < cfg.qa_only_rate) {
                with_cap = false;
            } else if (u < cfg.qa_only_rate + cfg.caption_only_rate) {
                with_qa = false;
            }
        }
        if (with_qa) sample.qa = generate_qa(sample.scene, qa_rng);
        if (with_cap) sample.caption = render_caption(sample.scene);
        (heldout ? corpus.heldout : corpus.train).push_back(std::move(sample));
    }
    return corpus;
}

// ---- file format -----------------------------------------------------------------

namespace {

std::string join_ints(const std::vector<int>& xs) {
    std::string out;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(xs[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream iss(s);
    int v;
    while (iss >> v) out.push_back(v);
    return out;
}

}  // namespace

std::string format_sample(const TrainSample& s) {
    std::vector<int> cells(s.scene.cells.begin(), s.scene.cells.end());
    std::string line = "scene:" + std::to_string(s.scene.rows) + " " + std::to_string(s.scene.cols) + " " + join_ints(cells);
    line += "|cap:" + (s.caption ? join_ints(*s.caption) : std::string());
    line += "|q:" + (s.qa ? join_ints(s.qa->question) : std::string());
    line += "|a:" + (s.qa ? join_ints(s.qa->answer) : std::string());
    return line;
}

TrainSample parse_sample(const std::string& line) {
    auto field = [&](const std::string& tag) -> std::string {
        size_t start = line.find(tag);
        if (start == std::string::npos) throw data_error("dataset record missing field " + tag);
        start += tag.size();
        size_t end = line.find('|', start);
        return line.substr(start, end == std::string::npos ? std::string::npos : end - start);
    };
    TrainSample s;
    std::vector<int> scene_ints = split_ints(field("scene:"));
    if (scene_ints.size() < 2) throw data_error("malformed scene field");
    s.scene.rows = scene_ints[0];
    s.scene.cols = scene_ints[1];
    if (static_cast<int>(scene_ints.size()) != 2 + s.scene.rows * s.scene.cols)
        throw data_error("scene cell count does not match grid");
    for (size_t i = 2; i < scene_ints.size(); ++i) {
        int c = scene_ints[i];
        if (c < 0 || c > kNumColors * kNumShapes) throw data_error("cell value out of range");
        s.scene.cells.push_back(static_cast<uint8_t>(c));
    }
    std::vector<int> cap = split_ints(field("cap:"));
    std::vector<int> q = split_ints(field("q:"));
    std::vector<int> a = split_ints(field("a:"));
    if (!cap.empty()) s.caption = cap;
    if (!q.empty()) {
        if (a.empty()) throw data_error("question without answer");
        s.qa = QaPair{q, a};
    }
    if (!s.qa && !s.caption) throw data_error("sample carries neither QA nor caption");
    return s;
}

void write_dataset(const std::string& path, const std::vector<TrainSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    for (const TrainSample& s : samples) out << format_sample(s) << "\n";
    if (!out) throw io_error("write failed: " + path);
}

std::vector<TrainSample> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::vector<TrainSample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(parse_sample(line));
    }
    return out;
}

}  // namespace f2b
