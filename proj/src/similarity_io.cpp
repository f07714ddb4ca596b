#include "irra/array_io.hpp"
#include "irra/errors.hpp"
#include "irra/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace irra {

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

template <typename T>
T parse_cell(const std::string& cell, std::size_t line) {
  T v{};
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("similarity CSV line " + std::to_string(line) + ": bad value '" + cell + "'");
  }
  return v;
}

}  // namespace

std::string similarity_to_csv(const SimilarityTable& t) {
  if (static_cast<std::size_t>(t.scores.rows()) != t.query_ids.size() ||
      static_cast<std::size_t>(t.scores.cols()) != t.gallery_ids.size()) {
    throw ShapeError("similarity table ids do not match the score matrix");
  }
  std::ostringstream out;
  out << "query_id";
  for (auto g : t.gallery_ids) out << ',' << g;
  out << '\n';
  char buf[32];
  for (Eigen::Index q = 0; q < t.scores.rows(); ++q) {
    out << t.query_ids[static_cast<std::size_t>(q)];
    for (Eigen::Index g = 0; g < t.scores.cols(); ++g) {
      std::snprintf(buf, sizeof buf, "%.17g", t.scores(q, g));
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}

SimilarityTable similarity_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("similarity CSV is empty");
  auto header = split_cells(line);
  if (header.empty() || header[0] != "query_id") {
    throw ParseError("similarity CSV line 1: header must start with 'query_id'");
  }
  SimilarityTable t;
  for (std::size_t i = 1; i < header.size(); ++i) {
    t.gallery_ids.push_back(parse_cell<std::size_t>(header[i], 1));
  }
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != header.size()) {
      throw ParseError("similarity CSV line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    }
    t.query_ids.push_back(parse_cell<std::size_t>(cells[0], line_no));
    for (std::size_t i = 1; i < cells.size(); ++i) values.push_back(parse_cell<double>(cells[i], line_no));
  }
  t.scores = ConstMatrixMap(values.data(), static_cast<Eigen::Index>(t.query_ids.size()),
                            static_cast<Eigen::Index>(t.gallery_ids.size()));
  return t;
}

void save_similarity_csv(const std::filesystem::path& path, const SimilarityTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << similarity_to_csv(table);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

SimilarityTable load_similarity_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return similarity_from_csv(ss.str());
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  if (static_cast<std::size_t>(set.embeddings.rows()) != set.ids.size()) {
    throw ShapeError(std::to_string(set.embeddings.rows()) + " embedding rows for " +
                     std::to_string(set.ids.size()) + " ids");
  }
  ArrayFile file;
  file.metadata = {{"kind", "embeddings"}};
  const auto rows = static_cast<std::size_t>(set.embeddings.rows());
  const auto cols = static_cast<std::size_t>(set.embeddings.cols());
  file.arrays.push_back({"embeddings", {rows, cols},
                         {set.embeddings.data(), set.embeddings.data() + rows * cols}});
  file.arrays.push_back({"ids", {rows}, {set.ids.begin(), set.ids.end()}});
  save_array_file(path, file);
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  const ArrayFile file = load_array_file(path);
  if (file.metadata.value("kind", "") != "embeddings") {
    throw ParseError("'" + path.string() + "' is not an embeddings file");
  }
  const auto& e = file.get("embeddings");
  const auto& ids = file.get("ids");
  if (e.shape.size() != 2 || ids.shape.size() != 1 || ids.shape[0] != e.shape[0]) {
    throw ParseError("'" + path.string() + "': inconsistent embeddings/ids shapes");
  }
  EmbeddingSet set;
  set.embeddings = ConstMatrixMap(e.values.data(), static_cast<Eigen::Index>(e.shape[0]),
                                  static_cast<Eigen::Index>(e.shape[1]));
  for (double v : ids.values) {
    if (!(v >= 0.0) || v != std::floor(v)) throw ParseError("'" + path.string() + "': non-integer id");
    set.ids.push_back(static_cast<std::size_t>(v));
  }
  return set;
}

SimilarityTable similarity_from_embeddings(const EmbeddingSet& queries, const EmbeddingSet& gallery) {
  if (queries.embeddings.cols() != gallery.embeddings.cols()) {
    throw ShapeError("query width " + std::to_string(queries.embeddings.cols()) +
                     " vs gallery width " + std::to_string(gallery.embeddings.cols()));
  }
  auto normalized = [](const RowMatrix& m, const char* what) {
    RowMatrix out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double n = out.row(i).norm();
      if (n == 0.0) {
        throw DegenerateInputError(std::string("zero-norm ") + what + " embedding at row " +
                                   std::to_string(i));
      }
      out.row(i) /= n;
    }
    return out;
  };
  return {normalized(queries.embeddings, "query") *
              normalized(gallery.embeddings, "gallery").transpose(),
          queries.ids, gallery.ids};
}

}  // namespace irra
