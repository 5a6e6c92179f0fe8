#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dpnmt/tensor.hpp"

namespace dpnmt {

class Rng;

// Named parameter tensors. Names are slash-separated; the reconstructors
// live under "enc_rec/" and "dec_rec/", everything else is encoder-decoder.
class ParameterSet {
  public:
    using Map = std::map<std::string, Tensor>;

    bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    void set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }
    void erase(const std::string& name) { tensors_.erase(name); }

    std::vector<std::string> names() const;
    std::size_t size() const { return tensors_.size(); }
    std::size_t value_count() const;

    // Entries whose name starts with prefix.
    ParameterSet subset(const std::string& prefix) const;
    ParameterSet filter(const std::function<bool(const std::string&)>& keep) const;

    Map::iterator begin() { return tensors_.begin(); }
    Map::iterator end() { return tensors_.end(); }
    Map::const_iterator begin() const { return tensors_.begin(); }
    Map::const_iterator end() const { return tensors_.end(); }

    bool operator==(const ParameterSet& other) const { return tensors_ == other.tensors_; }

  private:
    Map tensors_;
};

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double range, Rng& rng);

// Binary checkpoint container; see docs/checkpoint_format.md.
std::string serialize_checkpoint(const ParameterSet& params);
ParameterSet deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace dpnmt
