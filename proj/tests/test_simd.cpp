#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "cfdbench/simd.hpp"

using namespace cfdbench;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed, T lo = T(-2), T hi = T(2)) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  std::vector<T> out(n);
  for (auto& x : out) x = static_cast<T>(dist(rng));
  return out;
}

}  // namespace

TEST_CASE("isa detection reports a valid name") {
  const std::string name = simd::isa_name();
  CHECK((name == "avx2" || name == "scalar"));
}

#ifdef CFDBENCH_HAVE_AVX2

// PROPERTY: the AVX2 kernels compute the same result as the scalar reference
// kernels on identical inputs, across awkward (non-multiple-of-lane) lengths.
TEST_CASE_TEMPLATE("avx2 dot matches scalar reference", T, float, double) {
  for (std::size_t n : {0, 1, 3, 7, 8, 9, 15, 16, 17, 64, 1000, 1023}) {
    const auto a = random_vec<T>(n, 11 + n);
    const auto b = random_vec<T>(n, 29 + n);
    const T s = simd::ref::dot(a.data(), b.data(), n);
    const T v = simd::avx2::dot(a.data(), b.data(), n);
    // identical operands, different summation order: tolerance scales with n
    const double tol = 1e-5 * (1.0 + static_cast<double>(n));
    CHECK(std::abs(static_cast<double>(s - v)) <= tol);
  }
}

TEST_CASE_TEMPLATE("avx2 axpy matches scalar reference", T, float, double) {
  for (std::size_t n : {0, 1, 5, 8, 13, 32, 1000}) {
    const auto x = random_vec<T>(n, 3 + n);
    auto y1 = random_vec<T>(n, 5 + n);
    auto y2 = y1;
    simd::ref::axpy(T(0.37), x.data(), y1.data(), n);
    simd::avx2::axpy(T(0.37), x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-6));
  }
}

TEST_CASE_TEMPLATE("avx2 relu matches scalar reference exactly", T, float, double) {
  for (std::size_t n : {0, 1, 6, 8, 9, 100}) {
    const auto x = random_vec<T>(n, 77 + n);
    std::vector<T> a(n), b(n);
    simd::ref::relu(x.data(), a.data(), n);
    simd::avx2::relu(x.data(), b.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(a[i] == b[i]);
  }
}

#endif  // CFDBENCH_HAVE_AVX2

// DERIVED: 2x3 * 3x2 product worked by hand.
// A = [[1,2,3],[4,5,6]], B = [[7,8],[9,10],[11,12]]
// C = [[1*7+2*9+3*11, 1*8+2*10+3*12],[4*7+5*9+6*11, 4*8+5*10+6*12]]
//   = [[58,64],[139,154]]
TEST_CASE("gemm_acc matches hand-worked product") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  const std::vector<double> b{7, 8, 9, 10, 11, 12};
  std::vector<double> c(4, 0.0);
  simd::gemm_acc(a.data(), b.data(), c.data(), 2, 3, 2);
  CHECK(c[0] == doctest::Approx(58));
  CHECK(c[1] == doctest::Approx(64));
  CHECK(c[2] == doctest::Approx(139));
  CHECK(c[3] == doctest::Approx(154));
}

// PROPERTY: the transposed-view accumulators agree with explicit
// materialized transposes fed through gemm_acc.
TEST_CASE("transposed gemm variants agree with materialized transposes") {
  const std::size_t m = 5, k = 7, n = 4;
  const auto a = random_vec<double>(m * k, 101);  // [m,k]
  const auto b = random_vec<double>(k * n, 102);  // [k,n]

  // C1 = A^T fed as [k,m] through gemm_at_b_acc against B2 [k,n]
  std::vector<double> at(k * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
  std::vector<double> c1(m * n, 0.0), c2(m * n, 0.0);
  simd::gemm_acc(a.data(), b.data(), c1.data(), m, k, n);
  simd::gemm_at_b_acc(at.data(), b.data(), c2.data(), m, k, n);
  for (std::size_t i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c2[i]));

  // C3 = A[m,k] * (B^T)^T via gemm_a_bt_acc with B^T materialized as [n,k]
  std::vector<double> bt(n * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  std::vector<double> c3(m * n, 0.0);
  simd::gemm_a_bt_acc(a.data(), bt.data(), c3.data(), m, k, n);
  for (std::size_t i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c3[i]));
}

// DERIVED: one Adam step worked by hand.
// p=1, g=0.5, m=v=0, step 1, lr=0.1, b1=0.9, b2=0.999, eps=1e-8
//   m1 = 0.1*0.5 = 0.05       mhat = 0.05/(1-0.9)    = 0.5
//   v1 = 0.001*0.25 = 2.5e-4  vhat = 2.5e-4/(1-0.999) = 0.25
//   p  = 1 - 0.1*0.5/(sqrt(0.25)+1e-8) = 1 - 0.1/(1+2e-8) ~= 0.9000000010
TEST_CASE("adam_update single-step hand oracle") {
  double p = 1.0, g = 0.5, m = 0.0, v = 0.0;
  simd::adam_update(&p, &g, &m, &v, 1, 0.1, 0.9, 0.999, 1e-8, 1.0 - 0.9, 1.0 - 0.999);
  CHECK(m == doctest::Approx(0.05));
  CHECK(v == doctest::Approx(2.5e-4));
  CHECK(p == doctest::Approx(0.9000000010).epsilon(1e-9));
}
