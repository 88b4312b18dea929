#include "collab/feature_matrix.hpp"

#include <algorithm>
#include <unordered_set>

#include "collab/error.hpp"

namespace collab {

namespace {

void check_unique(const std::vector<std::string>& columns) {
    std::unordered_set<std::string> seen;
    for (const auto& c : columns) {
        if (!seen.insert(c).second) throw Error("duplicate column name '" + c + "'");
    }
}

}  // namespace

FeatureMatrix::FeatureMatrix(std::vector<std::string> columns) : columns_(std::move(columns)) {
    check_unique(columns_);
}

FeatureMatrix::FeatureMatrix(std::vector<std::string> columns, std::size_t rows)
    : columns_(std::move(columns)), data_(rows * columns_.size(), 0.0), rows_(rows) {
    check_unique(columns_);
}

bool FeatureMatrix::has_column(std::string_view name) const {
    return std::find(columns_.begin(), columns_.end(), name) != columns_.end();
}

std::size_t FeatureMatrix::column_index(std::string_view name) const {
    auto it = std::find(columns_.begin(), columns_.end(), name);
    if (it == columns_.end()) throw Error("unknown column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - columns_.begin());
}

std::vector<double> FeatureMatrix::column(std::size_t col) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = at(r, col);
    return out;
}

void FeatureMatrix::add_row(std::span<const double> values) {
    if (values.size() != columns_.size()) throw Error("row width does not match column count");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
    FeatureMatrix out(columns_);
    out.data_.reserve(indices.size() * columns_.size());
    for (std::size_t idx : indices) out.add_row(row(idx));
    return out;
}

FeatureMatrix FeatureMatrix::select_columns(std::span<const std::string> names) const {
    std::vector<std::size_t> idx;
    idx.reserve(names.size());
    for (const auto& n : names) idx.push_back(column_index(n));
    FeatureMatrix out(std::vector<std::string>(names.begin(), names.end()), rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < idx.size(); ++c) out.at(r, c) = at(r, idx[c]);
    }
    return out;
}

FeatureMatrix FeatureMatrix::drop_column(std::string_view name) const {
    std::vector<std::string> keep;
    for (const auto& c : columns_) {
        if (c != name) keep.push_back(c);
    }
    return select_columns(keep);
}

}  // namespace collab
