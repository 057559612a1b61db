#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dispir {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rgb = Eigen::Array3d;

inline constexpr double kPi = 3.14159265358979323846;

// Error hierarchy. The CLI maps these onto exit codes 1/2/3.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class UsageError : public Error {
  public:
    using Error::Error;
};

class DataError : public Error {
  public:
    using Error::Error;
};

class NumericalError : public Error {
  public:
    using Error::Error;
};

// Dense row-major 2D grid of values (depth, normals, masks...).
template <typename T>
class Grid {
  public:
    Grid() = default;
    Grid(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(static_cast<size_t>(width) * static_cast<size_t>(height), fill) {
        if (width < 0 || height < 0) throw DataError("Grid: negative dimensions");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T &operator()(int x, int y) { return data_[index(x, y)]; }
    const T &operator()(int x, int y) const { return data_[index(x, y)]; }
    T &operator[](size_t i) { return data_[i]; }
    const T &operator[](size_t i) const { return data_[i]; }

    size_t index(int x, int y) const {
        return static_cast<size_t>(y) * static_cast<size_t>(width_) + static_cast<size_t>(x);
    }

    bool same_shape(int w, int h) const { return w == width_ && h == height_; }
    template <typename U>
    bool same_shape(const Grid<U> &o) const {
        return o.width() == width_ && o.height() == height_;
    }

    std::vector<T> &data() { return data_; }
    const std::vector<T> &data() const { return data_; }

  private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using Mask = Grid<std::uint8_t>;
using DepthMap = Grid<double>;
using NormalMap = Grid<Vec3>;

inline size_t count_set(const Mask &m) {
    return static_cast<size_t>(std::count_if(m.data().begin(), m.data().end(),
                                             [](std::uint8_t v) { return v != 0; }));
}

// Interleaved multi-channel image of linear intensities.
class Image {
  public:
    Image() = default;
    Image(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<size_t>(width) * height * channels, fill) {
        if (width < 0 || height < 0 || channels < 1)
            throw DataError("Image: invalid dimensions");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    size_t pixel_count() const { return static_cast<size_t>(width_) * height_; }
    size_t size() const { return data_.size(); }

    double &at(int x, int y, int c) { return data_[offset(x, y, c)]; }
    double at(int x, int y, int c) const { return data_[offset(x, y, c)]; }
    double &operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    Rgb rgb(size_t pixel) const {
        const size_t o = pixel * static_cast<size_t>(channels_);
        if (channels_ == 1) return Rgb::Constant(data_[o]);
        return Rgb(data_[o], data_[o + 1], data_[o + 2]);
    }
    void set_rgb(size_t pixel, const Rgb &v) {
        const size_t o = pixel * static_cast<size_t>(channels_);
        for (int c = 0; c < channels_; ++c) data_[o + c] = v[c];
    }

    bool same_shape(const Image &o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    std::vector<double> &data() { return data_; }
    const std::vector<double> &data() const { return data_; }

  private:
    size_t offset(int x, int y, int c) const {
        return (static_cast<size_t>(y) * width_ + x) * channels_ + c;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

inline Image clip01(Image img) {
    for (double &v : img.data()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

inline double luminance(const Rgb &c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

// Thread count from DISPIR_THREADS, falling back to hardware concurrency.
inline unsigned thread_count() {
    if (const char *env = std::getenv("DISPIR_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

// Runs fn(begin, end, chunk) over fixed-size chunks of [0, n). Chunk boundaries
// depend only on n and chunk_size, so per-chunk partial results reduced in chunk
// order are identical for any thread count.
inline void parallel_chunks(size_t n, size_t chunk_size,
                            const std::function<void(size_t, size_t, size_t)> &fn) {
    if (n == 0) return;
    chunk_size = std::max<size_t>(chunk_size, 1);
    const size_t chunks = (n + chunk_size - 1) / chunk_size;
    const unsigned workers = static_cast<unsigned>(std::min<size_t>(thread_count(), chunks));
    auto run = [&](size_t chunk) {
        const size_t b = chunk * chunk_size;
        fn(b, std::min(n, b + chunk_size), chunk);
    };
    if (workers <= 1) {
        for (size_t c = 0; c < chunks; ++c) run(c);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (size_t c = t; c < chunks; c += workers) run(c);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto &th : pool) th.join();
    for (auto &e : errors)
        if (e) std::rethrow_exception(e);
}

inline size_t chunk_count(size_t n, size_t chunk_size) {
    return n == 0 ? 0 : (n + chunk_size - 1) / chunk_size;
}

} // namespace dispir
