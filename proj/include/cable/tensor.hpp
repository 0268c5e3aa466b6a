#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cable/errors.hpp"

namespace cable {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Vector whose resize() default-initializes instead of zero-filling. Op
// outputs are always fully written, so the memset would be wasted work.
template <typename T>
struct uninit_allocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = uninit_allocator<U>;
    };
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

template <typename T>
using Buf = std::vector<T, uninit_allocator<T>>;

// Live tensor-buffer bytes, with a high-water mark for bench reports.
struct TensorBytes {
    inline static std::atomic<int64_t> current{0};
    inline static std::atomic<int64_t> peak{0};

    static void add(int64_t b) {
        int64_t cur = current.fetch_add(b) + b;
        int64_t p = peak.load();
        while (cur > p && !peak.compare_exchange_weak(p, cur)) {
        }
    }
    static void sub(int64_t b) { current.fetch_sub(b); }
    static void reset_peak() { peak.store(current.load()); }
};

namespace detail {

template <typename T>
std::shared_ptr<Buf<T>> make_buffer(int64_t n, bool zero) {
    auto* raw = new Buf<T>();
    if (zero)
        raw->assign(static_cast<size_t>(n), T(0));
    else
        raw->resize(static_cast<size_t>(n));
    int64_t bytes = n * static_cast<int64_t>(sizeof(T));
    TensorBytes::add(bytes);
    return std::shared_ptr<Buf<T>>(raw, [bytes](Buf<T>* p) {
        TensorBytes::sub(bytes);
        delete p;
    });
}

}  // namespace detail

// Dense row-major tensor. Data and gradient buffers are shared, so copies
// are cheap views of the same storage; a tensor with a gradient buffer is
// "tracked" and participates in reverse-mode differentiation.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        data_ = detail::make_buffer<T>(shape_numel(shape_), false);
        for (auto& v : *data_) v = fill;
    }

    Tensor(Shape shape, std::vector<T> vals) : shape_(std::move(shape)) {
        int64_t n = shape_numel(shape_);
        if (static_cast<int64_t>(vals.size()) != n)
            throw ShapeError("tensor: " + std::to_string(vals.size()) +
                             " values for shape " + shape_str(shape_));
        data_ = detail::make_buffer<T>(n, false);
        std::copy(vals.begin(), vals.end(), data_->begin());
    }

    static Tensor uninit(Shape shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = detail::make_buffer<T>(shape_numel(t.shape_), false);
        return t;
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return shape_numel(shape_); }

    T* ptr() { return data_->data(); }
    const T* ptr() const { return data_->data(); }
    Buf<T>& values() { return *data_; }
    const Buf<T>& values() const { return *data_; }

    T item() const {
        if (!defined() || numel() != 1)
            throw ShapeError("tensor: item() needs exactly one element");
        return (*data_)[0];
    }

    T& operator()(int64_t i, int64_t j) {
        return (*data_)[static_cast<size_t>(i * shape_[1] + j)];
    }
    T operator()(int64_t i, int64_t j) const {
        return (*data_)[static_cast<size_t>(i * shape_[1] + j)];
    }

    bool tracked() const { return grad_ != nullptr; }

    void enable_grad() {
        if (!grad_) grad_ = detail::make_buffer<T>(numel(), true);
    }

    // Gradient access is const: constness of a Tensor view refers to the
    // handle, not the shared buffers (same convention as shared_ptr).
    Buf<T>& grad() const {
        if (!grad_) throw ShapeError("tensor: gradient not enabled");
        return *grad_;
    }
    T* grad_ptr() const { return grad_->data(); }

    void zero_grad() {
        if (grad_)
            for (auto& v : *grad_) v = T(0);
    }

    // Shares data and gradient; only the shape changes.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw ShapeError("reshape: " + shape_str(shape_) + " to " +
                             shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        t.grad_ = grad_;
        return t;
    }

  private:
    Shape shape_;
    std::shared_ptr<Buf<T>> data_;
    std::shared_ptr<Buf<T>> grad_;
};

// Wengert list. Constructing a Tape makes it the active recorder for ops on
// Tensor<T> in this thread; destruction restores the previous one. backward()
// walks the recorded closures exactly once in reverse.
template <typename T>
class Tape {
  public:
    Tape() : prev_(active_) { active_ = this; }
    ~Tape() { active_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> node) { nodes_.push_back(std::move(node)); }
    size_t node_count() const { return nodes_.size(); }

    void backward(const Tensor<T>& root) {
        if (root.numel() != 1)
            throw ShapeError("backward: root must be scalar, got " +
                             shape_str(root.shape()));
        if (!root.tracked())
            throw ArgumentError("backward: root is not on the tape");
        if (used_)
            throw ArgumentError("backward: tape already consumed");
        used_ = true;
        root.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

  private:
    std::vector<std::function<void()>> nodes_;
    Tape* prev_;
    bool used_ = false;
    inline static thread_local Tape* active_ = nullptr;
};

// The tape to record on, or nullptr when no input is tracked (or no tape is
// active). Ops call this once and skip gradient work entirely otherwise.
template <typename T>
Tape<T>* grads_wanted(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = Tape<T>::active();
    if (!tape) return nullptr;
    for (const Tensor<T>* t : inputs)
        if (t->tracked()) return tape;
    return nullptr;
}

}  // namespace cable
