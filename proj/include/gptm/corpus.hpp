// Copyright 2026 The GPTM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
/// \file
/// \brief Sparse bag-of-words corpora: loading, saving, labels and splitting.
///
/// On-disk docword format (all ids 1-indexed):
///
///     D
///     V
///     NNZ
///     docID wordID count     (NNZ lines)
///
/// Word ids are stored 0-indexed in memory.

#ifndef GPTM__CORPUS_HPP_
#define GPTM__CORPUS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gptm/error.hpp"
#include "gptm/random.hpp"

namespace gptm
{

struct WordCount
{
  int word = 0;   ///< 0-indexed vocabulary id
  int count = 0;  ///< strictly positive

  bool operator==(const WordCount &) const = default;
};

/// One document in canonical sparse form: word ids strictly increasing.
struct Document
{
  std::vector<WordCount> entries;
  std::optional<int> label;

  long total() const
  {
    long n = 0;
    for (const auto & e : entries) {
      n += e.count;
    }
    return n;
  }

  bool operator==(const Document &) const = default;
};

struct Corpus
{
  int vocab_size = 0;
  std::vector<Document> docs;
  std::vector<std::string> vocab;

  std::size_t size() const {return docs.size();}

  long total_words() const
  {
    long n = 0;
    for (const auto & d : docs) {
      n += d.total();
    }
    return n;
  }

  bool has_labels() const
  {
    return std::any_of(docs.begin(), docs.end(), [](const Document & d) {return d.label.has_value();});
  }

  std::vector<std::optional<int>> labels() const
  {
    std::vector<std::optional<int>> out;
    out.reserve(docs.size());
    for (const auto & d : docs) {
      out.push_back(d.label);
    }
    return out;
  }

  bool operator==(const Corpus &) const = default;
};

struct LoadOptions
{
  /// Keep zero-word documents (with a warning on stderr) instead of failing.
  bool allow_empty = false;
};

namespace detail
{

inline bool next_content_line(std::istream & in, std::string & line, long & lineno)
{
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.find_first_not_of(" \t") != std::string::npos) {
      return true;
    }
  }
  return false;
}

inline std::string where(const std::string & path, long lineno)
{
  return path + ":" + std::to_string(lineno) + ": ";
}

inline long parse_header_value(
  std::istream & in, const std::string & path, long & lineno, const char * name)
{
  std::string line;
  if (!next_content_line(in, line, lineno)) {
    throw LoadError(where(path, lineno + 1) + "missing header value " + name);
  }
  std::istringstream ss(line);
  long v = 0;
  std::string rest;
  if (!(ss >> v) || (ss >> rest)) {
    throw LoadError(where(path, lineno) + "malformed header: expected a single integer " + name);
  }
  return v;
}

}  // namespace detail

/// Reads only the vocabulary file (one token per line).
inline std::vector<std::string> load_vocab(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw LoadError(path + ": cannot open");
  }
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    vocab.push_back(line);
  }
  while (!vocab.empty() && vocab.back().empty()) {
    vocab.pop_back();
  }
  return vocab;
}

/// Loads a docword file and its vocabulary. Duplicate (doc, word) entries
/// are summed. Pass an empty vocab_path to synthesize "w1".."wV".
inline Corpus load_bow(
  const std::string & docword_path, const std::string & vocab_path,
  const LoadOptions & opts = {})
{
  std::ifstream in(docword_path, std::ios::binary);
  if (!in) {
    throw LoadError(docword_path + ": cannot open");
  }
  long lineno = 0;
  const long num_docs = detail::parse_header_value(in, docword_path, lineno, "D");
  const long vocab_size = detail::parse_header_value(in, docword_path, lineno, "V");
  const long nnz = detail::parse_header_value(in, docword_path, lineno, "NNZ");
  if (num_docs <= 0 || vocab_size <= 0 || nnz < 0) {
    throw LoadError(
            detail::where(docword_path, lineno) +
            "malformed header: D and V must be positive, NNZ non-negative");
  }

  std::vector<std::map<int, long>> counts(num_docs);
  std::string line;
  long seen = 0;
  while (detail::next_content_line(in, line, lineno)) {
    std::istringstream ss(line);
    long d = 0, w = 0, c = 0;
    std::string rest;
    if (!(ss >> d >> w >> c) || (ss >> rest)) {
      throw LoadError(detail::where(docword_path, lineno) + "expected 'docID wordID count'");
    }
    if (d < 1 || d > num_docs) {
      throw LoadError(
              detail::where(docword_path, lineno) + "doc id " + std::to_string(d) +
              " outside [1, " + std::to_string(num_docs) + "]");
    }
    if (w < 1 || w > vocab_size) {
      throw LoadError(
              detail::where(docword_path, lineno) + "word id " + std::to_string(w) +
              " exceeds V=" + std::to_string(vocab_size));
    }
    if (c <= 0) {
      throw LoadError(
              detail::where(docword_path, lineno) + "count must be positive, got " +
              std::to_string(c));
    }
    counts[d - 1][static_cast<int>(w - 1)] += c;
    ++seen;
  }
  if (seen != nnz) {
    throw LoadError(
            detail::where(docword_path, lineno) + "header announced NNZ=" + std::to_string(nnz) +
            " but found " + std::to_string(seen) + " entries");
  }

  Corpus corpus;
  corpus.vocab_size = static_cast<int>(vocab_size);
  corpus.docs.resize(num_docs);
  for (long d = 0; d < num_docs; ++d) {
    if (counts[d].empty()) {
      if (!opts.allow_empty) {
        throw LoadError(docword_path + ": document " + std::to_string(d + 1) + " has no words");
      }
      std::cerr << "warning: " << docword_path << ": document " << d + 1 << " has no words\n";
    }
    for (const auto & [w, c] : counts[d]) {
      corpus.docs[d].entries.push_back({w, static_cast<int>(c)});
    }
  }

  if (vocab_path.empty()) {
    for (long w = 0; w < vocab_size; ++w) {
      corpus.vocab.push_back("w" + std::to_string(w + 1));
    }
  } else {
    corpus.vocab = load_vocab(vocab_path);
    if (static_cast<long>(corpus.vocab.size()) != vocab_size) {
      throw LoadError(
              vocab_path + ": expected " + std::to_string(vocab_size) + " lines, found " +
              std::to_string(corpus.vocab.size()));
    }
  }
  return corpus;
}

/// Reads the labels sidecar: one integer per line, one line per document.
/// A line holding "-" marks an unlabeled document.
inline std::vector<std::optional<int>> load_labels(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw LoadError(path + ": cannot open");
  }
  std::vector<std::optional<int>> labels;
  std::string line;
  long lineno = 0;
  while (detail::next_content_line(in, line, lineno)) {
    std::istringstream ss(line);
    std::string tok, rest;
    ss >> tok;
    if (ss >> rest) {
      throw LoadError(detail::where(path, lineno) + "expected a single label");
    }
    if (tok == "-") {
      labels.push_back(std::nullopt);
      continue;
    }
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) {
        throw std::invalid_argument(tok);
      }
      labels.push_back(v);
    } catch (const std::exception &) {
      throw LoadError(detail::where(path, lineno) + "bad label '" + tok + "'");
    }
  }
  return labels;
}

inline void attach_labels(Corpus & corpus, const std::vector<std::optional<int>> & labels)
{
  if (labels.size() != corpus.docs.size()) {
    throw ValidationError(
            "labels: expected " + std::to_string(corpus.docs.size()) + " entries, got " +
            std::to_string(labels.size()));
  }
  for (std::size_t d = 0; d < labels.size(); ++d) {
    corpus.docs[d].label = labels[d];
  }
}

inline void save_bow(
  const Corpus & corpus, const std::string & docword_path, const std::string & vocab_path)
{
  std::ofstream out(docword_path, std::ios::binary);
  if (!out) {
    throw Error("cannot open " + docword_path + " for writing");
  }
  std::size_t nnz = 0;
  for (const auto & d : corpus.docs) {
    nnz += d.entries.size();
  }
  out << corpus.docs.size() << '\n' << corpus.vocab_size << '\n' << nnz << '\n';
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    for (const auto & e : corpus.docs[d].entries) {
      out << d + 1 << ' ' << e.word + 1 << ' ' << e.count << '\n';
    }
  }
  if (!vocab_path.empty()) {
    std::ofstream vout(vocab_path, std::ios::binary);
    if (!vout) {
      throw Error("cannot open " + vocab_path + " for writing");
    }
    for (const auto & w : corpus.vocab) {
      vout << w << '\n';
    }
  }
}

inline void save_labels(const Corpus & corpus, const std::string & path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot open " + path + " for writing");
  }
  for (const auto & d : corpus.docs) {
    if (d.label) {
      out << *d.label << '\n';
    } else {
      out << "-\n";
    }
  }
}

/// A corpus directory holds docword.txt, vocab.txt and optionally labels.txt.
inline Corpus load_corpus_dir(const std::filesystem::path & dir, const LoadOptions & opts = {})
{
  if (!std::filesystem::is_directory(dir)) {
    throw ValidationError(dir.string() + ": not a corpus directory");
  }
  const auto vocab = dir / "vocab.txt";
  Corpus corpus = load_bow(
    (dir / "docword.txt").string(),
    std::filesystem::exists(vocab) ? vocab.string() : std::string{}, opts);
  const auto labels = dir / "labels.txt";
  if (std::filesystem::exists(labels)) {
    attach_labels(corpus, load_labels(labels.string()));
  }
  return corpus;
}

inline void save_corpus_dir(const Corpus & corpus, const std::filesystem::path & dir)
{
  std::filesystem::create_directories(dir);
  save_bow(corpus, (dir / "docword.txt").string(), (dir / "vocab.txt").string());
  if (corpus.has_labels()) {
    save_labels(corpus, (dir / "labels.txt").string());
  }
}

/// Subset of a corpus in the given document order; vocabulary is shared.
inline Corpus select_documents(const Corpus & corpus, const std::vector<std::size_t> & index)
{
  Corpus out;
  out.vocab_size = corpus.vocab_size;
  out.vocab = corpus.vocab;
  out.docs.reserve(index.size());
  for (auto i : index) {
    out.docs.push_back(corpus.docs.at(i));
  }
  return out;
}

struct Split
{
  Corpus train;
  Corpus test;
  std::vector<std::size_t> train_index;  ///< position in the original corpus
  std::vector<std::size_t> test_index;
};

/// Deterministic train/test split. round(test_fraction * D) documents go
/// to the test side; both sides keep the original document order.
inline Split split(const Corpus & corpus, double test_fraction, std::uint64_t seed)
{
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("split: test fraction must lie in (0, 1)");
  }
  const std::size_t n = corpus.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test >= n) {
    throw ValidationError(
            "split: fraction " + std::to_string(test_fraction) + " of " + std::to_string(n) +
            " documents leaves one side empty");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = i;
  }
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) {
    is_test[order[i]] = true;
  }
  Split s;
  for (std::size_t i = 0; i < n; ++i) {
    (is_test[i] ? s.test_index : s.train_index).push_back(i);
  }
  s.train = select_documents(corpus, s.train_index);
  s.test = select_documents(corpus, s.test_index);
  return s;
}

}  // namespace gptm

#endif  // GPTM__CORPUS_HPP_
