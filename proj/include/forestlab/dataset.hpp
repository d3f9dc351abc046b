#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forestlab/rng.hpp"

namespace forestlab {

enum class Task { kRegression, kClassification };

const char* to_string(Task task);
Task task_from_string(const std::string& name);

/// Immutable numeric dataset. Features are stored column-major so that split
/// search can scan one feature at a time; a stable per-feature sort order is
/// computed once at construction and shared between copies.
class Dataset {
public:
    /// `features` holds n*p values in column-major order.
    Dataset(std::size_t n, std::size_t p, std::vector<double> features,
            std::vector<double> response,
            std::optional<std::vector<double>> truth = std::nullopt,
            std::vector<std::string> feature_names = {});

    /// Builds from row vectors (convenient for tests and hand-built data).
    static Dataset from_rows(const std::vector<std::vector<double>>& rows,
                             std::vector<double> response,
                             std::optional<std::vector<double>> truth = std::nullopt);

    std::size_t n() const { return n_; }
    std::size_t p() const { return p_; }

    double feature(std::size_t row, std::size_t col) const { return matrix_->values[col * n_ + row]; }
    std::span<const double> column(std::size_t col) const {
        return {matrix_->values.data() + col * n_, n_};
    }
    std::vector<double> row(std::size_t i) const;

    /// Row indices sorted ascending by feature `col`; ties keep row order.
    std::span<const std::uint32_t> sorted_rows(std::size_t col) const {
        return {matrix_->order.data() + col * n_, n_};
    }

    const std::vector<double>& response() const { return response_; }
    const std::optional<std::vector<double>>& truth() const { return truth_; }
    const std::vector<std::string>& feature_names() const { return matrix_->names; }

    /// Number of classes implied by integer labels 0..K-1 (K = max label + 1).
    /// Throws if any response is not a non-negative integer.
    std::size_t class_count() const;

    /// New dataset restricted to `rows` (in the given order, duplicates kept).
    Dataset subset(std::span<const std::size_t> rows) const;

    /// Same features and truth with a different response vector.
    Dataset with_response(std::vector<double> response) const;

private:
    struct Matrix {
        std::vector<double> values;
        std::vector<std::uint32_t> order;
        std::vector<std::string> names;
    };

    Dataset(std::size_t n, std::size_t p, std::shared_ptr<const Matrix> matrix,
            std::vector<double> response, std::optional<std::vector<double>> truth);

    void validate_response() const;

    std::size_t n_;
    std::size_t p_;
    std::shared_ptr<const Matrix> matrix_;
    std::vector<double> response_;
    std::optional<std::vector<double>> truth_;
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// n indices drawn i.i.d. uniformly with replacement from [0, n).
std::vector<std::size_t> bootstrap_sample(std::size_t n, RngStream& rng);
std::vector<std::size_t> bootstrap_sample(const Dataset& data, RngStream& rng);

/// Uniform random partition with |train| = round(train_fraction * n).
/// Both index lists are returned sorted.
SplitIndices train_test_split(std::size_t n, double train_fraction, RngStream& rng);
SplitIndices train_test_split(const Dataset& data, double train_fraction, RngStream& rng);

/// CSV with a header row: feature columns, then `y`, then optional `f_true`.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& data);

std::vector<std::string> default_feature_names(std::size_t p);

}  // namespace forestlab
