#include "effzero/replay.hpp"

#include <algorithm>
#include <cmath>

#include "effzero/formulas.hpp"
#include "effzero/serialize.hpp"

namespace effzero {

void GameSegment::validate() const {
  const size_t t = actions.size();
  if (t == 0) throw ReplayError("segment: empty");
  if (obs.size() != t + 1)
    throw ReplayError("segment: expected " + std::to_string(t + 1) +
                      " observations for " + std::to_string(t) + " moves");
  if (rewards.size() != t || policies.size() != t || root_values.size() != t ||
      collect_steps.size() != t)
    throw ReplayError("segment: per-transition arrays disagree on length");
  for (size_t i = 1; i < t; ++i)
    if (collect_steps[i] < collect_steps[i - 1])
      throw ReplayError("segment: collection steps must be nondecreasing");
}

// ---------------------------------------------------------------------------
// SumTree
// ---------------------------------------------------------------------------

void SumTree::rebuild(size_t capacity) {
  size_t cap = 1;
  while (cap < capacity) cap <<= 1;
  std::vector<double> fresh(2 * cap, 0.0);
  for (size_t i = 0; i < size_; ++i) fresh[cap + i] = tree_[offset_ + i];
  offset_ = cap;
  tree_ = std::move(fresh);
  for (size_t i = offset_ - 1; i >= 1; --i)
    tree_[i] = tree_[2 * i] + tree_[2 * i + 1];
}

void SumTree::push(double weight) {
  if (size_ >= offset_) rebuild(std::max<size_t>(2 * (size_ + 1), 64));
  ++size_;
  update(size_ - 1, weight);
}

void SumTree::update(size_t i, double weight) {
  size_t node = offset_ + i;
  tree_[node] = weight;
  node >>= 1;
  while (node >= 1) {
    tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
    node >>= 1;
  }
}

size_t SumTree::find(double mass) const {
  size_t node = 1;
  while (node < offset_) {
    const double left = tree_[2 * node];
    if (mass < left) {
      node = 2 * node;
    } else {
      mass -= left;
      node = 2 * node + 1;
    }
  }
  size_t i = node - offset_;
  if (i >= size_) i = size_ - 1;
  return i;
}

// ---------------------------------------------------------------------------
// ReplayBuffer
// ---------------------------------------------------------------------------

void ReplayBuffer::append(GameSegment segment) {
  segment.validate();
  std::lock_guard<std::mutex> lock(mu_);

  double p_new = 1.0;
  if (any_priority_) {
    p_new = kPriorityFloor;
    for (float p : priorities_) p_new = std::max(p_new, static_cast<double>(p));
  }

  const int t = segment.length();
  segment_base_.push_back(next_flat_id_);
  for (int i = 0; i < t; ++i) {
    priorities_.push_back(static_cast<float>(p_new));
    tree_.push(std::pow(p_new, alpha_));
  }
  next_flat_id_ += t;
  segments_.push_back(std::move(segment));
  any_priority_ = true;
  max_priority_ = std::max(max_priority_, p_new);

  // FIFO eviction by whole segments once over capacity.
  int64_t live = next_flat_id_ - evicted_transitions_;
  while (live > capacity_ && segments_.size() > 1) {
    const int evict = segments_.front().length();
    for (int i = 0; i < evict; ++i) {
      tree_.update(static_cast<size_t>(tree_evicted_ + i), 0.0);
      priorities_.pop_front();
    }
    tree_evicted_ += evict;
    evicted_transitions_ += evict;
    segments_.pop_front();
    segment_base_.pop_front();
    live = next_flat_id_ - evicted_transitions_;
  }
}

int64_t ReplayBuffer::transition_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return next_flat_id_ - evicted_transitions_;
}

int64_t ReplayBuffer::total_appended() const {
  std::lock_guard<std::mutex> lock(mu_);
  return next_flat_id_;
}

SampleBatch ReplayBuffer::sample(int batch_size, double beta,
                                 int64_t min_size, Rng& rng) {
  std::lock_guard<std::mutex> lock(mu_);
  const int64_t live = next_flat_id_ - evicted_transitions_;
  if (live < min_size)
    throw ReplayError("replay: " + std::to_string(live) +
                      " transitions stored, need " + std::to_string(min_size));
  const double total = tree_.total();
  if (!(total > 0.0)) throw ReplayError("replay: no sampling mass");

  SampleBatch out;
  out.indices.resize(batch_size);
  std::vector<double> probs(batch_size);
  for (int b = 0; b < batch_size; ++b) {
    const size_t leaf = tree_.find(rng.uniform() * total);
    out.indices[b] = static_cast<int64_t>(leaf);
    probs[b] = tree_.weight(leaf) / total;
  }
  out.weights = importance_weights(probs, live, beta);
  return out;
}

void ReplayBuffer::update_priorities(const std::vector<int64_t>& indices,
                                     const std::vector<float>& value_errors) {
  std::lock_guard<std::mutex> lock(mu_);
  for (size_t i = 0; i < indices.size(); ++i) {
    const int64_t id = indices[i];
    if (id < evicted_transitions_) continue;  // already evicted
    if (id >= next_flat_id_)
      throw ReplayError("replay: priority index " + std::to_string(id) +
                        " out of range");
    const double p =
        std::max(static_cast<double>(std::abs(value_errors[i])),
                 kPriorityFloor);
    priorities_[static_cast<size_t>(id - evicted_transitions_)] =
        static_cast<float>(p);
    tree_.update(static_cast<size_t>(id), std::pow(p, alpha_));
    max_priority_ = std::max(max_priority_, p);
  }
}

double ReplayBuffer::probability(int64_t index) const {
  std::lock_guard<std::mutex> lock(mu_);
  if (index < evicted_transitions_ || index >= next_flat_id_) return 0.0;
  return tree_.weight(static_cast<size_t>(index)) / tree_.total();
}

double ReplayBuffer::max_priority() const {
  std::lock_guard<std::mutex> lock(mu_);
  double p = kPriorityFloor;
  for (float x : priorities_) p = std::max(p, static_cast<double>(x));
  return priorities_.empty() ? 1.0 : p;
}

ReplayBuffer::View ReplayBuffer::resolve(int64_t flat_index) const {
  if (flat_index < evicted_transitions_ || flat_index >= next_flat_id_)
    throw ReplayError("replay: transition " + std::to_string(flat_index) +
                      " is not resident");
  // segment_base_ is sorted; find the last base <= flat_index
  auto it = std::upper_bound(segment_base_.begin(), segment_base_.end(),
                             flat_index);
  const size_t seg = static_cast<size_t>(it - segment_base_.begin()) - 1;
  View v;
  v.segment = &segments_[seg];
  v.offset = static_cast<int>(flat_index - segment_base_[seg]);
  v.flat_index = flat_index;
  return v;
}

// ---------------------------------------------------------------------------
// Buffer snapshots
// ---------------------------------------------------------------------------

namespace {
constexpr char kBufferMagic[8] = {'E', 'F', 'Z', 'B', 'U', 'F', 0, 0};
constexpr uint32_t kBufferVersion = 1;

void write_segment(std::ostream& os, const GameSegment& s) {
  const int t = s.length();
  bin::write_u32(os, static_cast<uint32_t>(t));
  bin::write_u32(os, static_cast<uint32_t>(s.obs[0].channels));
  bin::write_u32(os, static_cast<uint32_t>(s.obs[0].height));
  bin::write_u32(os, static_cast<uint32_t>(s.obs[0].width));
  bin::write_u32(os, static_cast<uint32_t>(s.policies[0].size()));
  bin::write_u32(os, s.terminal ? 1 : 0);
  bin::write_u32(os, static_cast<uint32_t>(s.prior_frames.size()));
  for (const auto& o : s.obs) bin::write_f32(os, o.pixels.data(), o.size());
  for (const auto& o : s.prior_frames)
    bin::write_f32(os, o.pixels.data(), o.size());
  for (int a : s.actions) bin::write_u32(os, static_cast<uint32_t>(a));
  bin::write_f32(os, s.rewards.data(), t);
  for (const auto& p : s.policies)
    bin::write_f32(os, p.data(), static_cast<int64_t>(p.size()));
  bin::write_f32(os, s.root_values.data(), t);
  for (int64_t c : s.collect_steps) bin::write_i64(os, c);
}

GameSegment read_segment(std::istream& is) {
  GameSegment s;
  const int t = static_cast<int>(bin::read_u32(is));
  const int c = static_cast<int>(bin::read_u32(is));
  const int h = static_cast<int>(bin::read_u32(is));
  const int w = static_cast<int>(bin::read_u32(is));
  const int actions = static_cast<int>(bin::read_u32(is));
  s.terminal = bin::read_u32(is) != 0;
  const int priors = static_cast<int>(bin::read_u32(is));
  s.obs.resize(t + 1);
  for (auto& o : s.obs) {
    o.channels = c;
    o.height = h;
    o.width = w;
    o.pixels.resize(o.size());
    bin::read_f32(is, o.pixels.data(), o.size());
  }
  s.prior_frames.resize(priors);
  for (auto& o : s.prior_frames) {
    o.channels = c;
    o.height = h;
    o.width = w;
    o.pixels.resize(o.size());
    bin::read_f32(is, o.pixels.data(), o.size());
  }
  s.actions.resize(t);
  for (auto& a : s.actions) a = static_cast<int>(bin::read_u32(is));
  s.rewards.resize(t);
  bin::read_f32(is, s.rewards.data(), t);
  s.policies.assign(t, std::vector<float>(actions));
  for (auto& p : s.policies) bin::read_f32(is, p.data(), actions);
  s.root_values.resize(t);
  bin::read_f32(is, s.root_values.data(), t);
  s.collect_steps.resize(t);
  for (auto& x : s.collect_steps) x = bin::read_i64(is);
  return s;
}
}  // namespace

void write_buffer_snapshot(const std::string& path, const ReplayBuffer& rb,
                           const std::string& metadata) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw SerializeError("buffer: cannot write '" + path + "'");
  os.write(kBufferMagic, 8);
  bin::write_u32(os, kBufferVersion);
  bin::write_string(os, metadata);
  rb.with_all_segments([&](const std::deque<GameSegment>& segs) {
    bin::write_u32(os, static_cast<uint32_t>(segs.size()));
    for (const auto& s : segs) write_segment(os, s);
  });
  if (!os) throw SerializeError("buffer: write failed for '" + path + "'");
}

BufferSnapshot read_buffer_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SerializeError("buffer: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kBufferMagic, 8) != 0)
    throw SerializeError("buffer: bad magic in '" + path + "'");
  if (bin::read_u32(is) != kBufferVersion)
    throw SerializeError("buffer: unsupported version");
  BufferSnapshot snap;
  snap.metadata = bin::read_string(is);
  const uint32_t n = bin::read_u32(is);
  snap.segments.reserve(n);
  for (uint32_t i = 0; i < n; ++i) snap.segments.push_back(read_segment(is));
  return snap;
}

}  // namespace effzero
