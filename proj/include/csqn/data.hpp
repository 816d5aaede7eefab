#ifndef CSQN_DATA_HPP
#define CSQN_DATA_HPP

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "csqn/common.hpp"
#include "csqn/nn.hpp"
#include "csqn/rng.hpp"

namespace csqn::data {

struct Dataset {
    int dim = 0;
    int classes = 0;
    std::vector<float> x;    // size x dim, row-major, values in [0,1]
    std::vector<uint8_t> y;  // class indices

    int size() const { return static_cast<int>(y.size()); }

    nn::Batch batch() const {
        return nn::Batch{x.data(), y.data(), size(), dim};
    }

    nn::Batch rows(int begin, int count) const {
        return nn::Batch{x.data() + static_cast<size_t>(begin) * dim,
                         y.data() + begin, count, dim};
    }
};

// Contiguous copy of selected rows, for shuffled minibatches.
inline Dataset gather(const Dataset& src, const std::vector<int>& idx) {
    Dataset out;
    out.dim = src.dim;
    out.classes = src.classes;
    out.x.resize(idx.size() * static_cast<size_t>(src.dim));
    out.y.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(src.x.data() + static_cast<size_t>(idx[i]) * src.dim, src.dim,
                    out.x.data() + i * static_cast<size_t>(src.dim));
        out.y[i] = src.y[idx[i]];
    }
    return out;
}

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in,
                                         const std::string& path) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 16) != Z_OK)
        throw DataError("zlib init failed for: " + path);
    std::vector<unsigned char> out;
    out.reserve(in.size() * 4);
    unsigned char buf[1 << 16];
    zs.next_in = const_cast<unsigned char*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    do {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError("gzip decode failed for: " + path);
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    } while (rc != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

// Reads raw bytes; gzip content is detected by its 0x1f8b magic and inflated.
inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
        return gunzip(bytes, path);
    return bytes;
}

inline uint32_t be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) |
           uint32_t(p[3]);
}

struct IdxFile {
    uint32_t magic = 0;
    std::vector<uint32_t> dims;
    std::vector<unsigned char> payload;
};

inline IdxFile parse_idx(const std::string& path) {
    const std::vector<unsigned char> bytes = read_maybe_gzip(path);
    if (bytes.size() < 4) throw DataError("truncated IDX file: " + path);
    IdxFile f;
    f.magic = be32(bytes.data());
    uint32_t ndims = 0;
    if (f.magic == 2051)
        ndims = 3;
    else if (f.magic == 2049)
        ndims = 1;
    else
        throw DataError("bad IDX magic number in: " + path);
    if (bytes.size() < 4 + 4 * static_cast<size_t>(ndims))
        throw DataError("truncated IDX header: " + path);
    size_t expected = 1;
    for (uint32_t i = 0; i < ndims; ++i) {
        f.dims.push_back(be32(bytes.data() + 4 + 4 * i));
        expected *= f.dims.back();
    }
    const size_t off = 4 + 4 * static_cast<size_t>(ndims);
    if (bytes.size() - off != expected)
        throw DataError("IDX payload size mismatch in: " + path);
    f.payload.assign(bytes.begin() + off, bytes.end());
    return f;
}

inline std::string resolve_idx(const std::string& dir, const std::string& name) {
    namespace fs = std::filesystem;
    const std::string raw = dir + "/" + name;
    if (fs::exists(raw)) return raw;
    if (fs::exists(raw + ".gz")) return raw + ".gz";
    throw DataError("MNIST file not found: " + raw + "[.gz]");
}

inline Dataset idx_to_dataset(const IdxFile& images, const IdxFile& labels,
                              const std::string& where) {
    if (images.dims[0] != labels.dims[0])
        throw DataError("image/label count mismatch in " + where);
    Dataset d;
    d.dim = static_cast<int>(images.dims[1] * images.dims[2]);
    d.classes = 10;
    const size_t n = images.dims[0];
    d.x.resize(n * d.dim);
    for (size_t i = 0; i < n * static_cast<size_t>(d.dim); ++i)
        d.x[i] = static_cast<float>(images.payload[i]) / 255.0f;
    d.y.assign(labels.payload.begin(), labels.payload.end());
    for (uint8_t v : d.y)
        if (v > 9) throw DataError("label out of range in " + where);
    return d;
}

}  // namespace detail

struct MnistData {
    Dataset train;  // after validation split
    Dataset val;
    Dataset test;
};

// Parses the IDX pairs from `dir` (raw or gzip), scales pixels to [0,1] and
// splits the training set deterministically (seeded index shuffle) with a
// 1/12 validation fraction — 55k/5k on the full 60k set.
inline MnistData load_mnist(const std::string& dir, uint64_t split_seed = 42) {
    const detail::IdxFile train_images =
        detail::parse_idx(detail::resolve_idx(dir, "train-images-idx3-ubyte"));
    const detail::IdxFile train_labels =
        detail::parse_idx(detail::resolve_idx(dir, "train-labels-idx1-ubyte"));
    const detail::IdxFile test_images =
        detail::parse_idx(detail::resolve_idx(dir, "t10k-images-idx3-ubyte"));
    const detail::IdxFile test_labels =
        detail::parse_idx(detail::resolve_idx(dir, "t10k-labels-idx1-ubyte"));

    const Dataset full = detail::idx_to_dataset(train_images, train_labels, dir + " (train)");
    MnistData out;
    out.test = detail::idx_to_dataset(test_images, test_labels, dir + " (test)");

    std::vector<int> idx(full.size());
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng = RngStream::derive(split_seed, StreamId::Split);
    rng.shuffle(idx);
    const int val_count = full.size() / 12;
    const std::vector<int> val_idx(idx.begin(), idx.begin() + val_count);
    const std::vector<int> train_idx(idx.begin() + val_count, idx.end());
    out.val = gather(full, val_idx);
    out.train = gather(full, train_idx);
    return out;
}

struct RotationSpec {
    int task_count = 20;      // T
    double degrees_per_task = 5.0;  // rotation angle for task t is degrees_per_task*(t-1)

    double angle_deg(int t) const { return degrees_per_task * (t - 1); }
};

// Rotates every image about its center by spec.angle_deg(t), bilinear
// interpolation with zero padding. t=1 returns the pixels unchanged.
inline Dataset rotate_task(const Dataset& raw, const RotationSpec& spec, int t) {
    if (t < 1 || t > spec.task_count)
        throw DimensionError("rotate_task: task index out of range");
    if (spec.angle_deg(t) == 0.0) return raw;

    const int side = static_cast<int>(std::lround(std::sqrt(double(raw.dim))));
    if (side * side != raw.dim)
        throw DimensionError("rotate_task: inputs are not square images");
    const double theta = spec.angle_deg(t) * (3.14159265358979323846 / 180.0);
    const double c = std::cos(theta), s = std::sin(theta);
    const double ctr = (side - 1) / 2.0;

    Dataset out;
    out.dim = raw.dim;
    out.classes = raw.classes;
    out.y = raw.y;
    out.x.resize(raw.x.size());

#pragma omp parallel for schedule(static)
    for (int img = 0; img < raw.size(); ++img) {
        const float* src = raw.x.data() + static_cast<size_t>(img) * raw.dim;
        float* dst = out.x.data() + static_cast<size_t>(img) * raw.dim;
        for (int r = 0; r < side; ++r) {
            const double dy = r - ctr;
            for (int col = 0; col < side; ++col) {
                const double dx = col - ctr;
                const double sx = ctr + c * dx + s * dy;
                const double sy = ctr - s * dx + c * dy;
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0, fy = sy - y0;
                auto at = [&](int yy, int xx) -> double {
                    if (yy < 0 || yy >= side || xx < 0 || xx >= side) return 0.0;
                    return src[yy * side + xx];
                };
                const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                 fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                dst[r * side + col] = static_cast<float>(v);
            }
        }
    }
    return out;
}

inline std::vector<int> task_permutation(uint64_t seed, int t, int dim) {
    std::vector<int> perm(dim);
    std::iota(perm.begin(), perm.end(), 0);
    if (t != 1) {
        RngStream rng = RngStream::derive(seed, StreamId::Permutation,
                                          {static_cast<uint64_t>(t)});
        rng.shuffle(perm);
    }
    return perm;
}

// Fixed pixel permutation per task; t=1 is the identity.
inline Dataset permute_task(const Dataset& raw, uint64_t seed, int t) {
    if (t == 1) return raw;
    const std::vector<int> perm = task_permutation(seed, t, raw.dim);
    Dataset out;
    out.dim = raw.dim;
    out.classes = raw.classes;
    out.y = raw.y;
    out.x.resize(raw.x.size());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < raw.size(); ++i) {
        const float* src = raw.x.data() + static_cast<size_t>(i) * raw.dim;
        float* dst = out.x.data() + static_cast<size_t>(i) * raw.dim;
        for (int j = 0; j < raw.dim; ++j) dst[j] = src[perm[j]];
    }
    return out;
}

struct SyntheticSpec {
    int task_count = 3;
    int dim = 16;
    int classes = 4;
    double shift = 1.0;  // mean drift per task step
    int n_train = 2000;
    int n_val = 500;
    int n_test = 1000;
};

// Class means for task t: well-separated base positions on the coordinate
// axes, drifting by `shift` per task along a fixed random direction per class.
inline std::vector<std::vector<double>> synthetic_task_means(const SyntheticSpec& spec,
                                                             uint64_t seed, int t) {
    std::vector<std::vector<double>> means(spec.classes,
                                           std::vector<double>(spec.dim, 0.0));
    for (int k = 0; k < spec.classes; ++k) {
        if (k < 2 * spec.dim) {
            means[k][k % spec.dim] = (k < spec.dim) ? 5.0 : -5.0;
        } else {
            RngStream rng = RngStream::derive(seed, StreamId::Synthetic,
                                              {9999u, static_cast<uint64_t>(k)});
            double norm = 0.0;
            for (int j = 0; j < spec.dim; ++j) {
                means[k][j] = rng.normal();
                norm += means[k][j] * means[k][j];
            }
            norm = std::sqrt(norm);
            for (int j = 0; j < spec.dim; ++j) means[k][j] *= 5.0 / norm;
        }
        if (spec.shift != 0.0 && t > 1) {
            RngStream dir = RngStream::derive(seed, StreamId::Synthetic,
                                              {777u, static_cast<uint64_t>(k)});
            std::vector<double> u(spec.dim);
            double norm = 0.0;
            for (int j = 0; j < spec.dim; ++j) {
                u[j] = dir.normal();
                norm += u[j] * u[j];
            }
            norm = std::sqrt(norm);
            for (int j = 0; j < spec.dim; ++j)
                means[k][j] += spec.shift * (t - 1) * u[j] / norm;
        }
    }
    return means;
}

enum class Split { Train, Validation, Test };

// Ordered task list; all tasks share input dimension and class count, with
// per-task datasets materialized on demand.
class TaskSequence {
  public:
    virtual ~TaskSequence() = default;
    virtual int task_count() const = 0;
    virtual int input_dim() const = 0;
    virtual int classes() const = 0;
    virtual Dataset make(int t, Split split) const = 0;  // t in [1, task_count]
    virtual std::string descriptor() const = 0;

  protected:
    void check_task(int t) const {
        if (t < 1 || t > task_count())
            throw DimensionError("task index out of range");
    }
};

class RotatedMnistSequence final : public TaskSequence {
  public:
    RotatedMnistSequence(std::shared_ptr<const MnistData> mnist, RotationSpec spec,
                         int train_cap = 0, int val_cap = 0)
        : mnist_(std::move(mnist)), spec_(spec), train_cap_(train_cap), val_cap_(val_cap) {}

    int task_count() const override { return spec_.task_count; }
    int input_dim() const override { return mnist_->train.dim; }
    int classes() const override { return 10; }

    Dataset make(int t, Split split) const override {
        check_task(t);
        const Dataset& base = split == Split::Train ? mnist_->train
                              : split == Split::Validation ? mnist_->val
                                                           : mnist_->test;
        const int cap = split == Split::Train ? train_cap_
                        : split == Split::Validation ? val_cap_
                                                     : 0;
        if (cap > 0 && cap < base.size()) {
            std::vector<int> idx(cap);
            std::iota(idx.begin(), idx.end(), 0);
            return rotate_task(gather(base, idx), spec_, t);
        }
        return rotate_task(base, spec_, t);
    }

    std::string descriptor() const override {
        return "rotated_mnist(T=" + std::to_string(spec_.task_count) +
               ",gamma=" + std::to_string(spec_.degrees_per_task) + ")";
    }

  private:
    std::shared_ptr<const MnistData> mnist_;
    RotationSpec spec_;
    int train_cap_, val_cap_;
};

class PermutedMnistSequence final : public TaskSequence {
  public:
    PermutedMnistSequence(std::shared_ptr<const MnistData> mnist, int task_count,
                          uint64_t perm_seed, int train_cap = 0, int val_cap = 0)
        : mnist_(std::move(mnist)), task_count_(task_count), perm_seed_(perm_seed),
          train_cap_(train_cap), val_cap_(val_cap) {}

    int task_count() const override { return task_count_; }
    int input_dim() const override { return mnist_->train.dim; }
    int classes() const override { return 10; }

    Dataset make(int t, Split split) const override {
        check_task(t);
        const Dataset& base = split == Split::Train ? mnist_->train
                              : split == Split::Validation ? mnist_->val
                                                           : mnist_->test;
        const int cap = split == Split::Train ? train_cap_
                        : split == Split::Validation ? val_cap_
                                                     : 0;
        if (cap > 0 && cap < base.size()) {
            std::vector<int> idx(cap);
            std::iota(idx.begin(), idx.end(), 0);
            return permute_task(gather(base, idx), perm_seed_, t);
        }
        return permute_task(base, perm_seed_, t);
    }

    std::string descriptor() const override {
        return "permuted_mnist(T=" + std::to_string(task_count_) + ")";
    }

  private:
    std::shared_ptr<const MnistData> mnist_;
    int task_count_;
    uint64_t perm_seed_;
    int train_cap_, val_cap_;
};

class SyntheticSequence final : public TaskSequence {
  public:
    SyntheticSequence(SyntheticSpec spec, uint64_t seed) : spec_(spec), seed_(seed) {
        if (spec_.dim < 2 || spec_.classes < 2)
            throw ConfigError("synthetic tasks need dim >= 2 and classes >= 2");
    }

    int task_count() const override { return spec_.task_count; }
    int input_dim() const override { return spec_.dim; }
    int classes() const override { return spec_.classes; }

    Dataset make(int t, Split split) const override {
        check_task(t);
        const int n = split == Split::Train ? spec_.n_train
                      : split == Split::Validation ? spec_.n_val
                                                   : spec_.n_test;
        const auto means = synthetic_task_means(spec_, seed_, t);
        RngStream rng = RngStream::derive(
            seed_, StreamId::Synthetic,
            {static_cast<uint64_t>(t), static_cast<uint64_t>(split)});
        Dataset d;
        d.dim = spec_.dim;
        d.classes = spec_.classes;
        d.x.resize(static_cast<size_t>(n) * spec_.dim);
        d.y.resize(n);
        for (int i = 0; i < n; ++i) {
            const int k = i % spec_.classes;
            d.y[i] = static_cast<uint8_t>(k);
            float* row = d.x.data() + static_cast<size_t>(i) * spec_.dim;
            for (int j = 0; j < spec_.dim; ++j) {
                // affine map of the raw blob coordinates into [0,1] keeps the
                // Batch value-range invariant; tails beyond +-10 are clipped
                const double raw = means[k][j] + rng.normal();
                row[j] = static_cast<float>(std::clamp((raw + 10.0) / 20.0, 0.0, 1.0));
            }
        }
        return d;
    }

    std::string descriptor() const override {
        return "synthetic(T=" + std::to_string(spec_.task_count) +
               ",d=" + std::to_string(spec_.dim) + ",shift=" + std::to_string(spec_.shift) +
               ")";
    }

  private:
    SyntheticSpec spec_;
    uint64_t seed_;
};

}  // namespace csqn::data

#endif  // CSQN_DATA_HPP
