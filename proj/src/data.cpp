#include "selfcal/data.hpp"

#include "selfcal/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace selfcal {

bool Dataset::fully_labeled() const {
  return std::none_of(labels.begin(), labels.end(), [](int y) { return y == kUnlabeled; });
}

Points Dataset::points_of_class(int label) const {
  const auto n = std::count(labels.begin(), labels.end(), label);
  Points out(n, 2);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < size(); ++i) {
    if (labels[static_cast<std::size_t>(i)] == label) out.row(r++) = x.row(i);
  }
  return out;
}

void ToyDatasetSpec::validate() const {
  gmm.validate();
  if (n_train < 1 || n_test < 0) throw Error(ErrorCode::InvalidArgument, "n_train must be >= 1 and n_test >= 0");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "labeled_fraction must lie in (0, 1]");
  }
  if (labeled_fraction * n_train < 1.0) throw Error(ErrorCode::InvalidArgument, "labeled_fraction * n_train < 1");
  for (const auto& comps : gmm.classes) {
    for (const auto& c : comps) {
      if (std::abs(c.mean.x()) > 12.0 || std::abs(c.mean.y()) > 8.0) {
        throw Error(ErrorCode::InvalidArgument, "component mean outside [-12, 12] x [-8, 8]");
      }
    }
  }
}

int ToyDatasetSpec::n_labeled() const {
  return static_cast<int>(std::llround(labeled_fraction * n_train));
}

ToySplits make_toy_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  Rng data_rng = make_rng(spec.seed, Stream::Data);
  const LabeledPoints train = sample_gmm(spec.gmm, spec.n_train, data_rng);
  const LabeledPoints test = sample_gmm(spec.gmm, spec.n_test, data_rng);

  std::vector<int> order(static_cast<std::size_t>(spec.n_train));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = make_rng(spec.seed, Stream::Split);
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_lab = static_cast<std::size_t>(spec.n_labeled());
  std::vector<bool> keep_label(static_cast<std::size_t>(spec.n_train), false);
  for (std::size_t i = 0; i < n_lab; ++i) keep_label[static_cast<std::size_t>(order[i])] = true;

  ToySplits out;
  out.labeled.x.resize(static_cast<Eigen::Index>(n_lab), 2);
  out.unlabeled.x.resize(spec.n_train - static_cast<Eigen::Index>(n_lab), 2);
  Eigen::Index li = 0;
  Eigen::Index ui = 0;
  for (Eigen::Index i = 0; i < spec.n_train; ++i) {
    if (keep_label[static_cast<std::size_t>(i)]) {
      out.labeled.x.row(li++) = train.x.row(i);
      out.labeled.labels.push_back(train.labels[static_cast<std::size_t>(i)]);
    } else {
      out.unlabeled.x.row(ui++) = train.x.row(i);
      out.unlabeled.labels.push_back(kUnlabeled);
    }
  }
  out.test.x = test.x;
  out.test.labels = test.labels;
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out = "x,y,label\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out += format_double(data.x(i, 0));
    out += ',';
    out += format_double(data.x(i, 1));
    out += ',';
    const int y = data.labels[static_cast<std::size_t>(i)];
    if (y != kUnlabeled) out += std::to_string(y);
    out += '\n';
  }
  return out;
}

namespace {

double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": bad number '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

Dataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> xs;
  Labels labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "x,y,label") throw Error(ErrorCode::ParseError, "line 1: expected header 'x,y,label'");
      continue;
    }
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 3 fields");
    }
    const std::string_view view(line);
    xs.push_back(parse_double(view.substr(0, c1), line_no));
    xs.push_back(parse_double(view.substr(c1 + 1, c2 - c1 - 1), line_no));
    const std::string_view label = view.substr(c2 + 1);
    if (label.empty()) {
      labels.push_back(kUnlabeled);
    } else {
      int y = 0;
      const auto res = std::from_chars(label.data(), label.data() + label.size(), y);
      if (res.ec != std::errc() || res.ptr != label.data() + label.size() || y < 0) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad label");
      }
      labels.push_back(y);
    }
  }
  if (line_no == 0) throw Error(ErrorCode::ParseError, "line 1: empty file");
  Dataset data;
  data.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>>(
      xs.data(), static_cast<Eigen::Index>(labels.size()), 2);
  data.labels = std::move(labels);
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << dataset_to_csv(data);
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_csv(buf.str());
}

}  // namespace selfcal
