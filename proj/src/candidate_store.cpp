#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

#include "swlora/numkit.hpp"
#include "swlora/switchbox.hpp"

namespace swlora {

const char* to_string(SelectionPolicy p) { return p == SelectionPolicy::sequential ? "sequential" : "random"; }
const char* to_string(Tier t) { return t == Tier::resident ? "resident" : "offloaded"; }

SelectionPolicy parse_policy(const std::string& s) {
  if (s == "sequential") return SelectionPolicy::sequential;
  if (s == "random") return SelectionPolicy::random;
  throw std::invalid_argument("unknown selection policy '" + s + "'");
}

Tier parse_tier(const std::string& s) {
  if (s == "resident") return Tier::resident;
  if (s == "offloaded") return Tier::offloaded;
  throw std::invalid_argument("unknown tier '" + s + "'");
}

// Flat storage: B-side vectors [0, k*m), then A-side vectors [k*m, k*m + k*n).
class CandidateBackend {
 public:
  virtual ~CandidateBackend() = default;
  virtual void read(std::size_t offset, std::span<double> out) const = 0;
  virtual void write(std::size_t offset, std::span<const double> in) = 0;
  virtual void sync() const = 0;
};

namespace {

class ResidentBackend final : public CandidateBackend {
 public:
  explicit ResidentBackend(std::size_t total) : data_(total) {}
  void read(std::size_t offset, std::span<double> out) const override {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.begin());
  }
  void write(std::size_t offset, std::span<const double> in) override {
    std::copy(in.begin(), in.end(), data_.begin() + static_cast<std::ptrdiff_t>(offset));
  }
  void sync() const override {}

 private:
  std::vector<double> data_;
};

class OffloadBackend final : public CandidateBackend {
 public:
  OffloadBackend(const std::filesystem::path& dir, std::size_t total) {
    static std::atomic<std::uint64_t> counter{0};
    std::filesystem::path base = dir.empty() ? std::filesystem::temp_directory_path() : dir;
    std::filesystem::create_directories(base);
    path_ = base / ("swlora_cand_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".bin");
    fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0600);
    if (fd_ < 0) throw OffloadError("offload: cannot create " + path_.string());
    if (::ftruncate(fd_, static_cast<off_t>(total * sizeof(double))) != 0) {
      ::close(fd_);
      throw OffloadError("offload: cannot size " + path_.string());
    }
    worker_ = std::thread([this] { run(); });
  }

  ~OffloadBackend() override {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
    ::close(fd_);
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

  void read(std::size_t offset, std::span<double> out) const override {
    sync();
    const auto bytes = out.size() * sizeof(double);
    const auto got = ::pread(fd_, out.data(), bytes, static_cast<off_t>(offset * sizeof(double)));
    if (got != static_cast<ssize_t>(bytes)) throw OffloadError("offload: short read from " + path_.string());
  }

  void write(std::size_t offset, std::span<const double> in) override {
    {
      std::lock_guard lock(mu_);
      queue_.push_back({offset, std::vector<double>(in.begin(), in.end())});
    }
    cv_.notify_all();
  }

  void sync() const override {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
    if (error_) {
      auto e = error_;
      error_ = nullptr;
      std::rethrow_exception(e);
    }
  }

 private:
  struct Job {
    std::size_t offset;
    std::vector<double> data;
  };

  void run() {
    std::unique_lock lock(mu_);
    for (;;) {
      cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (queue_.empty() && stop_) return;
      Job job = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
      lock.unlock();
      const auto bytes = job.data.size() * sizeof(double);
      const auto put = ::pwrite(fd_, job.data.data(), bytes, static_cast<off_t>(job.offset * sizeof(double)));
      lock.lock();
      if (put != static_cast<ssize_t>(bytes) && !error_) {
        error_ = std::make_exception_ptr(OffloadError("offload: short write to " + path_.string()));
      }
      busy_ = false;
      if (queue_.empty()) idle_cv_.notify_all();
    }
  }

  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  mutable std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  bool busy_ = false;
  bool stop_ = false;
  mutable std::exception_ptr error_;
  std::thread worker_;
};

std::unique_ptr<CandidateBackend> make_backend(Tier tier, const std::filesystem::path& dir, std::size_t total) {
  if (tier == Tier::resident) return std::make_unique<ResidentBackend>(total);
  return std::make_unique<OffloadBackend>(dir, total);
}

}  // namespace

CandidateStore::CandidateStore(const Matrix& cand_B, const Matrix& cand_A, SelectionPolicy policy, Rng select_rng,
                               Tier tier, const std::filesystem::path& offload_dir)
    : m_(cand_B.rows()),
      n_(cand_A.cols()),
      k_(std::min(cand_B.rows(), cand_A.cols())),
      policy_(policy),
      tier_(tier),
      offload_dir_(offload_dir),
      select_rng_(select_rng) {
  if (cand_B.cols() != k_ || cand_A.rows() != k_) {
    throw DimensionError("CandidateStore: expected cand_B " + shape_str(m_, k_) + " and cand_A " + shape_str(k_, n_) +
                         ", got " + shape_str(cand_B) + " and " + shape_str(cand_A));
  }
  backend_ = make_backend(tier_, offload_dir_, k_ * (m_ + n_));
  const Matrix bt = transpose(cand_B);
  backend_->write(0, bt.data());
  backend_->write(k_ * m_, cand_A.data());
}

CandidateStore::~CandidateStore() = default;
CandidateStore::CandidateStore(CandidateStore&&) noexcept = default;
CandidateStore& CandidateStore::operator=(CandidateStore&&) noexcept = default;

CandidateStore CandidateStore::sample(Rng& init_rng, std::size_t m, std::size_t n, double std_B, double std_A,
                                      SelectionPolicy policy, Rng select_rng, Tier tier,
                                      const std::filesystem::path& offload_dir) {
  const std::size_t k = std::min(m, n);
  Matrix cb = std_B > 0.0 ? uniform(init_rng, m, k, std_B) : Matrix::zeros(m, k);
  Matrix ca = std_A > 0.0 ? uniform(init_rng, k, n, std_A) : Matrix::zeros(k, n);
  return {cb, ca, policy, select_rng, tier, offload_dir};
}

void CandidateStore::set_cursor(Side side, std::size_t c) {
  if (c > k_) throw std::out_of_range("CandidateStore: cursor beyond candidate count");
  (side == Side::B ? cursor_B_ : cursor_A_) = c;
}

std::size_t CandidateStore::select(Side side) {
  if (policy_ == SelectionPolicy::random) return static_cast<std::size_t>(select_rng_.uniform_index(k_));
  std::size_t& cur = side == Side::B ? cursor_B_ : cursor_A_;
  const std::size_t j = cur % k_;
  cur = j + 1;
  return j;
}

void CandidateStore::check_range(Side side, std::size_t j0, std::size_t count) const {
  (void)side;
  if (j0 >= k_ || count > k_ - j0) {
    throw std::out_of_range("CandidateStore: candidate range [" + std::to_string(j0) + ", " +
                            std::to_string(j0 + count) + ") outside [0, " + std::to_string(k_) + ")");
  }
}

std::vector<double> CandidateStore::read(Side side, std::size_t j) const { return read_range(side, j, 1); }

void CandidateStore::write(Side side, std::size_t j, std::span<const double> v) { write_range(side, j, 1, v); }

std::vector<double> CandidateStore::read_range(Side side, std::size_t j0, std::size_t count) const {
  check_range(side, j0, count);
  const std::size_t len = vector_length(side);
  std::vector<double> out(count * len);
  const std::size_t base = side == Side::B ? 0 : k_ * m_;
  backend_->read(base + j0 * len, out);
  return out;
}

void CandidateStore::write_range(Side side, std::size_t j0, std::size_t count, std::span<const double> packed) {
  check_range(side, j0, count);
  const std::size_t len = vector_length(side);
  if (packed.size() != count * len) throw DimensionError("CandidateStore: packed length mismatch");
  const std::size_t base = side == Side::B ? 0 : k_ * m_;
  backend_->write(base + j0 * len, packed);
}

Matrix CandidateStore::cand_B() const {
  return transpose(Matrix(k_, m_, read_range(Side::B, 0, k_)));
}

Matrix CandidateStore::cand_A() const { return Matrix(k_, n_, read_range(Side::A, 0, k_)); }

void CandidateStore::offload_sync() const { backend_->sync(); }

void CandidateStore::set_tier(Tier tier, const std::filesystem::path& offload_dir) {
  if (tier == tier_ && (tier == Tier::resident || offload_dir == offload_dir_)) return;
  std::vector<double> all(k_ * (m_ + n_));
  backend_->read(0, all);
  auto next = make_backend(tier, offload_dir, all.size());
  next->write(0, all);
  backend_ = std::move(next);
  tier_ = tier;
  offload_dir_ = offload_dir;
}

CandidateStore CandidateStore::clone() const {
  CandidateStore copy(cand_B(), cand_A(), policy_, select_rng_, tier_, offload_dir_);
  copy.cursor_B_ = cursor_B_;
  copy.cursor_A_ = cursor_A_;
  return copy;
}

}  // namespace swlora
