#include <doctest.h>

#include <fstream>

#include "bifuse/archive.hpp"
#include "support/testing.hpp"

using namespace bifuse;
using namespace bifuse::testing;

TEST_CASE("save, load and save again is byte-identical") {
  ScratchDir dir("archive");
  TensorArchive a;
  a.metadata = R"({"kind":"test"})";
  a.put("b.weight", random_tensor({3, 4}, 1));
  a.put("a.bias", random_tensor({4}, 2));
  a.save(dir / "one.bin");
  const TensorArchive b = TensorArchive::load(dir / "one.bin");
  CHECK(b.metadata == a.metadata);
  CHECK(b.tensors.at("b.weight").shape == Shape{3, 4});
  CHECK(b.tensors.at("a.bias").values == a.tensors.at("a.bias").values);
  b.save(dir / "two.bin");
  CHECK(a.serialize() == TensorArchive::load(dir / "two.bin").serialize());
}

TEST_CASE("load_into checks names and shapes") {
  TensorArchive a;
  a.put("x", random_tensor({2, 2}, 3));
  Tensor dst = Tensor::zeros({2, 2});
  a.load_into("x", dst);
  CHECK(dst.at(3) == a.tensors.at("x").values[3]);
  Tensor wrong = Tensor::zeros({4});
  CHECK_THROWS_AS(a.load_into("x", wrong), LoadError);
  CHECK_THROWS_AS(a.load_into("y", dst), LoadError);

  ParamSet ps{{"x", Tensor::zeros({2, 2})}};
  TensorArchive pre;
  pre.put_all("m/", {{"x", random_tensor({2, 2}, 4)}});
  pre.load_all("m/", ps);
  CHECK(ps.at("x").at(0) == pre.tensors.at("m/x").values[0]);
}

TEST_CASE("corrupt or missing files are rejected") {
  ScratchDir dir("archive_bad");
  CHECK_THROWS_AS(TensorArchive::load(dir / "none.bin"), LoadError);
  TensorArchive a;
  a.put("x", random_tensor({8}, 5));
  const std::string bytes = a.serialize();
  CHECK_THROWS_AS(TensorArchive::deserialize(bytes.substr(0, bytes.size() - 5)), LoadError);
  CHECK_THROWS_AS(TensorArchive::deserialize("NOPE" + bytes.substr(4)), LoadError);
}
