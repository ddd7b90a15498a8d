#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace isac {

using cplx = std::complex<double>;

/// Dense complex matrix, row-major. Column vectors are n x 1 matrices.
class ComplexMatrix {
public:
    ComplexMatrix() = default;
    ComplexMatrix(std::size_t rows, std::size_t cols);
    ComplexMatrix(std::size_t rows, std::size_t cols, std::vector<cplx> data);

    static ComplexMatrix column(std::vector<cplx> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    cplx& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const cplx& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    cplx& operator[](std::size_t i) { return data_[i]; }
    const cplx& operator[](std::size_t i) const { return data_[i]; }

    std::span<cplx> data() { return data_; }
    std::span<const cplx> data() const { return data_; }

    /// Sum of |entry|^2.
    double frobenius_sq() const;
    double frobenius() const;
    bool all_finite() const;

    ComplexMatrix col(std::size_t c) const;
    ComplexMatrix adjoint() const;

    ComplexMatrix& operator*=(cplx s);
    ComplexMatrix& operator+=(const ComplexMatrix& other);
    ComplexMatrix& operator-=(const ComplexMatrix& other);

    friend bool operator==(const ComplexMatrix&, const ComplexMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<cplx> data_;
};

ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b);
ComplexMatrix operator*(cplx s, ComplexMatrix m);
ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b);
ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b);

/// a^H b for two column vectors of equal length.
cplx inner(const ComplexMatrix& a, const ComplexMatrix& b);

/// a^H (column c of m).
cplx inner_col(const ComplexMatrix& a, const ComplexMatrix& m, std::size_t c);

/// Largest entrywise |a - b|; dimensions must agree.
double max_abs_diff(const ComplexMatrix& a, const ComplexMatrix& b);

}  // namespace isac
