#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace collab {

// Dense row-major numeric table with unique column names.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    explicit FeatureMatrix(std::vector<std::string> columns);
    FeatureMatrix(std::vector<std::string> columns, std::size_t rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return columns_.size(); }
    const std::vector<std::string>& columns() const noexcept { return columns_; }

    bool has_column(std::string_view name) const;
    std::size_t column_index(std::string_view name) const;  // throws if absent

    double& at(std::size_t row, std::size_t col) { return data_[row * columns_.size() + col]; }
    double at(std::size_t row, std::size_t col) const { return data_[row * columns_.size() + col]; }

    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * columns_.size(), columns_.size()};
    }
    std::vector<double> column(std::size_t col) const;
    std::vector<double> column(std::string_view name) const { return column(column_index(name)); }

    void add_row(std::span<const double> values);

    FeatureMatrix select_rows(std::span<const std::size_t> indices) const;
    FeatureMatrix select_columns(std::span<const std::string> names) const;
    FeatureMatrix drop_column(std::string_view name) const;

private:
    std::vector<std::string> columns_;
    std::vector<double> data_;
    std::size_t rows_ = 0;
};

}  // namespace collab
