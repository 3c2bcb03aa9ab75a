#include "stylediff/vocab.hpp"

#include <fstream>
#include <sstream>

namespace stylediff {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> subject_words, std::vector<std::string> style_words)
    : subjects_(std::move(subject_words)), styles_(std::move(style_words)) {
  int id = 2;
  for (const auto& w : subjects_) {
    if (!ids_.emplace(w, id++).second)
      throw VocabularyError("duplicate subject word '" + w + "'");
  }
  for (const auto& w : styles_) {
    auto [it, fresh] = ids_.emplace(w, id++);
    if (!fresh) {
      if (is_subject_id(it->second))
        throw VocabularyError("word '" + w + "' appears as both subject and style");
      throw VocabularyError("duplicate style word '" + w + "'");
    }
  }
}

std::optional<int> Vocabulary::id_of(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::word_of(int id) const {
  static const std::string kNull = "<null>";
  static const std::string kUnk = "<unk>";
  if (id == kNullId) return kNull;
  if (id == kUnkId) return kUnk;
  int si = id - 2;
  if (si >= 0 && si < static_cast<int>(subjects_.size())) return subjects_[static_cast<size_t>(si)];
  int yi = si - static_cast<int>(subjects_.size());
  if (yi >= 0 && yi < static_cast<int>(styles_.size())) return styles_[static_cast<size_t>(yi)];
  throw VocabularyError("id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(size()));
}

int Vocabulary::subject_index(int id) const {
  if (!is_subject_id(id)) throw VocabularyError("id " + std::to_string(id) + " is not a subject");
  return id - 2;
}

int Vocabulary::style_index(int id) const {
  if (!is_style_id(id)) throw VocabularyError("id " + std::to_string(id) + " is not a style");
  return id - 2 - static_cast<int>(subjects_.size());
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw VocabularyError("cannot open vocabulary file " + path);
  std::vector<std::string> subjects, styles;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t tab = t.find('\t');
    if (tab == std::string::npos)
      throw VocabularyError(path + ":" + std::to_string(lineno) + ": expected 'word<TAB>class'");
    std::string word = trim(t.substr(0, tab));
    std::string cls = trim(t.substr(tab + 1));
    if (word.empty())
      throw VocabularyError(path + ":" + std::to_string(lineno) + ": empty word");
    if (cls == "subject")
      subjects.push_back(word);
    else if (cls == "style")
      styles.push_back(word);
    else
      throw VocabularyError(path + ":" + std::to_string(lineno) + ": class '" + cls +
                            "' is not subject|style");
  }
  return Vocabulary(std::move(subjects), std::move(styles));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw VocabularyError("cannot write vocabulary file " + path);
  for (const auto& w : subjects_) out << w << "\tsubject\n";
  for (const auto& w : styles_) out << w << "\tstyle\n";
}

std::vector<int> tokenize(const std::string& prompt, const Vocabulary& vocab) {
  std::vector<int> ids;
  std::stringstream ss(prompt);
  std::string segment;
  while (std::getline(ss, segment, ',')) {
    std::string seg = lower(trim(segment));
    if (seg.empty()) continue;
    if (auto id = vocab.id_of(seg)) {
      ids.push_back(*id);
      continue;
    }
    std::istringstream ws(seg);
    std::string word;
    while (ws >> word) {
      auto id = vocab.id_of(word);
      ids.push_back(id ? *id : Vocabulary::kUnkId);
    }
  }
  if (ids.empty()) ids.push_back(Vocabulary::kNullId);
  return ids;
}

Vocabulary default_vocabulary() {
  return Vocabulary(
      {"circle", "square", "triangle", "star", "cross", "ring", "diamond", "bar", "wedge", "dot",
       "hexagon", "frame"},
      {"crimson gouache", "azure ink", "amber fresco", "viridian oil", "violet pastel",
       "teal sketch", "magenta mural", "ochre print", "cobalt wash", "scarlet etch",
       "lime tempera", "indigo chalk", "coral stipple", "mint relief", "ruby glaze",
       "slate charcoal", "gold leaf", "plum lacquer", "cyan airbrush", "rust engraving",
       "emerald enamel", "rose crayon", "navy woodcut", "bronze patina"});
}

}  // namespace stylediff
