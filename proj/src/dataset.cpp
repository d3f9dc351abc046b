#include "forestlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "forestlab/csv.hpp"

namespace forestlab {

const char* to_string(Task task) {
    return task == Task::kRegression ? "regression" : "classification";
}

Task task_from_string(const std::string& name) {
    if (name == "regression") return Task::kRegression;
    if (name == "classification") return Task::kClassification;
    throw std::invalid_argument("unknown task '" + name + "' (expected regression|classification)");
}

std::vector<std::string> default_feature_names(std::size_t p) {
    std::vector<std::string> names;
    names.reserve(p);
    for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
    return names;
}

Dataset::Dataset(std::size_t n, std::size_t p, std::vector<double> features,
                 std::vector<double> response, std::optional<std::vector<double>> truth,
                 std::vector<std::string> feature_names)
    : n_(n), p_(p), response_(std::move(response)), truth_(std::move(truth)) {
    if (n_ < 1 || p_ < 1) throw std::invalid_argument("Dataset: need n >= 1 and p >= 1");
    if (features.size() != n_ * p_) {
        throw std::invalid_argument("Dataset: feature matrix has " + std::to_string(features.size()) +
                                    " values, expected n*p = " + std::to_string(n_ * p_));
    }
    for (double v : features) {
        if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite feature value");
    }
    if (feature_names.empty()) feature_names = default_feature_names(p_);
    if (feature_names.size() != p_) throw std::invalid_argument("Dataset: feature name count != p");
    if (n_ > UINT32_MAX) throw std::invalid_argument("Dataset: too many rows");

    auto matrix = std::make_shared<Matrix>();
    matrix->values = std::move(features);
    matrix->names = std::move(feature_names);
    matrix->order.resize(n_ * p_);
    for (std::size_t j = 0; j < p_; ++j) {
        auto first = matrix->order.begin() + static_cast<std::ptrdiff_t>(j * n_);
        std::iota(first, first + static_cast<std::ptrdiff_t>(n_), 0U);
        const double* col = matrix->values.data() + j * n_;
        std::stable_sort(first, first + static_cast<std::ptrdiff_t>(n_),
                         [col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }
    matrix_ = std::move(matrix);
    validate_response();
}

Dataset::Dataset(std::size_t n, std::size_t p, std::shared_ptr<const Matrix> matrix,
                 std::vector<double> response, std::optional<std::vector<double>> truth)
    : n_(n), p_(p), matrix_(std::move(matrix)), response_(std::move(response)), truth_(std::move(truth)) {
    validate_response();
}

void Dataset::validate_response() const {
    if (response_.size() != n_) throw std::invalid_argument("Dataset: response length != n");
    for (double v : response_) {
        if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite response value");
    }
    if (truth_ && truth_->size() != n_) throw std::invalid_argument("Dataset: truth length != n");
}

Dataset Dataset::from_rows(const std::vector<std::vector<double>>& rows, std::vector<double> response,
                           std::optional<std::vector<double>> truth) {
    if (rows.empty()) throw std::invalid_argument("Dataset: no rows");
    const std::size_t n = rows.size();
    const std::size_t p = rows.front().size();
    std::vector<double> values(n * p);
    for (std::size_t i = 0; i < n; ++i) {
        if (rows[i].size() != p) throw std::invalid_argument("Dataset: ragged rows");
        for (std::size_t j = 0; j < p; ++j) values[j * n + i] = rows[i][j];
    }
    return Dataset(n, p, std::move(values), std::move(response), std::move(truth));
}

std::vector<double> Dataset::row(std::size_t i) const {
    std::vector<double> out(p_);
    for (std::size_t j = 0; j < p_; ++j) out[j] = feature(i, j);
    return out;
}

std::size_t Dataset::class_count() const {
    double max_label = 0.0;
    for (double v : response_) {
        if (v < 0.0 || v != std::floor(v)) {
            throw std::invalid_argument("Dataset: classification labels must be non-negative integers");
        }
        max_label = std::max(max_label, v);
    }
    return static_cast<std::size_t>(max_label) + 1;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    if (rows.empty()) throw std::invalid_argument("Dataset::subset: empty row list");
    const std::size_t m = rows.size();
    std::vector<double> values(m * p_);
    std::vector<double> response(m);
    std::optional<std::vector<double>> truth;
    if (truth_) truth.emplace(m);
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = rows[k];
        if (i >= n_) throw std::out_of_range("Dataset::subset: row index out of range");
        for (std::size_t j = 0; j < p_; ++j) values[j * m + k] = feature(i, j);
        response[k] = response_[i];
        if (truth_) (*truth)[k] = (*truth_)[i];
    }
    return Dataset(m, p_, std::move(values), std::move(response), std::move(truth), matrix_->names);
}

Dataset Dataset::with_response(std::vector<double> response) const {
    return Dataset(n_, p_, matrix_, std::move(response), truth_);
}

std::vector<std::size_t> bootstrap_sample(std::size_t n, RngStream& rng) {
    if (n == 0) throw std::invalid_argument("bootstrap_sample: empty dataset");
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
    return rows;
}

std::vector<std::size_t> bootstrap_sample(const Dataset& data, RngStream& rng) {
    return bootstrap_sample(data.n(), rng);
}

SplitIndices train_test_split(std::size_t n, double train_fraction, RngStream& rng) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train_test_split: train_fraction must lie in (0, 1)");
    }
    if (n < 2) throw std::invalid_argument("train_test_split: need at least 2 rows");
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train == n) {
        throw std::invalid_argument("train_test_split: fraction leaves one side empty");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.below(i + 1))]);
    }
    SplitIndices out;
    out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

SplitIndices train_test_split(const Dataset& data, double train_fraction, RngStream& rng) {
    return train_test_split(data.n(), train_fraction, rng);
}

Dataset read_dataset_csv(const std::string& path) {
    const CsvTable table = read_csv(path);
    std::vector<std::size_t> feature_cols;
    std::optional<std::size_t> y_col;
    std::optional<std::size_t> truth_col;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        const auto& name = table.header[c];
        if (name == "y") {
            y_col = c;
        } else if (name == "f_true") {
            truth_col = c;
        } else {
            feature_cols.push_back(c);
        }
    }
    if (!y_col) throw std::runtime_error(path + ": missing response column 'y'");
    if (feature_cols.empty()) throw std::runtime_error(path + ": no feature columns");
    const std::size_t n = table.rows.size();
    const std::size_t p = feature_cols.size();
    if (n == 0) throw std::runtime_error(path + ": no data rows");

    std::vector<double> values(n * p);
    std::vector<double> response(n);
    std::optional<std::vector<double>> truth;
    if (truth_col) truth.emplace(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = table.rows[i];
        for (std::size_t j = 0; j < p; ++j) values[j * n + i] = parse_double(row[feature_cols[j]]);
        response[i] = parse_double(row[*y_col]);
        if (truth_col) (*truth)[i] = parse_double(row[*truth_col]);
    }
    std::vector<std::string> names;
    for (std::size_t c : feature_cols) names.push_back(table.header[c]);
    return Dataset(n, p, std::move(values), std::move(response), std::move(truth), std::move(names));
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
    std::vector<std::string> header = data.feature_names();
    header.push_back("y");
    if (data.truth()) header.push_back("f_true");
    CsvWriter writer(path, header);
    std::vector<std::string> cells(header.size());
    for (std::size_t i = 0; i < data.n(); ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < data.p(); ++j) cells[c++] = format_double(data.feature(i, j));
        cells[c++] = format_double(data.response()[i]);
        if (data.truth()) cells[c++] = format_double((*data.truth())[i]);
        writer.write_row(cells);
    }
    writer.close();
}

}  // namespace forestlab
