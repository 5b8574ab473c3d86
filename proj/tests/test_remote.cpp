#include <chrono>
#include <string>

#include <gtest/gtest.h>

#include "bba/remote.hpp"
#include "bba/rng.hpp"

using namespace bba;

namespace {

RemoteOptions fast_options(int retries) {
  RemoteOptions o;
  o.timeout = std::chrono::milliseconds(2000);
  o.max_retries = retries;
  o.initial_backoff = std::chrono::milliseconds(1);
  return o;
}

ImageTensor awkward_image(const ImageShape& s, Rng& rng) {
  ImageTensor x(s);
  for (auto& e : x.data()) e = uniform01(rng);
  x[0] = 0.1;  // not exactly representable
  x[1] = 1.0 / 3.0;
  x[2] = 0.0;
  x[3] = 1.0;
  return x;
}

}  // namespace

TEST(WireFormat, RequestRoundTripIsBitExact) {
  Rng rng = make_rng(41);
  const ImageTensor x = awkward_image({5, 4, 3}, rng);
  EXPECT_EQ(decode_classify_request(encode_classify_request(x)), x);
  EXPECT_THROW(decode_classify_request("{"), ProtocolError);
  EXPECT_THROW(decode_classify_request(R"({"shape":[2,2,1],"pixels":[1,2,3]})"), ProtocolError);
  EXPECT_THROW(decode_classify_request(R"({"shape":[2,0,1],"pixels":[]})"), ProtocolError);
}

TEST(WireFormat, LabelDecoding) {
  const LabelSet l({{"cat", 1}, {"tabby cat", 2}});
  EXPECT_EQ(decode_labels(encode_labels(l)), l);
  EXPECT_EQ(decode_labels(R"({"labels":[{"name":"cat","rank":1,"score":0.93}],"model":"x"})"), LabelSet::single("cat"));
  EXPECT_THROW(decode_labels(R"({"labels":[]})"), ProtocolError);
  EXPECT_THROW(decode_labels(R"({"labels":[{"name":"a","rank":2}]})"), ProtocolError);
  EXPECT_THROW(decode_labels(R"({"labels":[{"name":1,"rank":1}]})"), ProtocolError);
  EXPECT_THROW(decode_labels(R"({"labels":"oops")"), ProtocolError);
  std::string many = R"({"labels":[)";
  for (int i = 1; i <= 33; ++i) many += (i > 1 ? "," : "") + std::string(R"({"name":"l","rank":)") + std::to_string(i) + "}";
  EXPECT_THROW(decode_labels(many + "]}"), ProtocolError);
}

TEST(RemoteOracle, EchoRoundTripThroughServer) {
  Rng rng = make_rng(42);
  const ImageShape s{6, 6, 1};
  const ImageTensor x = awkward_image(s, rng);
  ImageTensor seen(s);
  StubServer server([&seen](const ImageTensor& in) {
    seen = in;
    return LabelSet({{"echo", 1}, {"second", 2}});
  });
  server.start();
  RemoteOracle oracle(server.endpoint(), s, fast_options(0));
  QueryLedger ledger;
  const LabelSet labels = query(oracle, x, ledger);
  EXPECT_EQ(labels, LabelSet({{"echo", 1}, {"second", 2}}));
  EXPECT_EQ(seen, x);
  EXPECT_EQ(ledger.total_queries(), 1u);
  ASSERT_EQ(server.request_bodies().size(), 1u);
  EXPECT_EQ(server.request_bodies().front(), encode_classify_request(x));
}

TEST(RemoteOracle, RetriedFailureChargesOnce) {
  const ImageShape s{2, 2, 1};
  StubOptions opts;
  opts.fail_first = 1;
  StubServer server([](const ImageTensor&) { return LabelSet::single("pos"); }, opts);
  server.start();
  RemoteOracle oracle(server.endpoint(), s, fast_options(2));
  QueryLedger ledger;
  EXPECT_EQ(query(oracle, ImageTensor(s, 0.5), ledger).top1(), "pos");
  EXPECT_EQ(ledger.total_queries(), 1u);
  EXPECT_EQ(oracle.attempts(), 2u);
  EXPECT_EQ(server.requests(), 2u);
}

TEST(RemoteOracle, MalformedResponseLeavesLedgerUnchanged) {
  const ImageShape s{2, 2, 1};
  StubOptions opts;
  opts.malformed = true;
  StubServer server([](const ImageTensor&) { return LabelSet::single("pos"); }, opts);
  server.start();
  RemoteOracle oracle(server.endpoint(), s, fast_options(2));
  QueryLedger ledger;
  EXPECT_THROW(query(oracle, ImageTensor(s, 0.5), ledger), ProtocolError);
  EXPECT_EQ(ledger.total_queries(), 0u);
  EXPECT_EQ(oracle.attempts(), 1u);
}

TEST(RemoteOracle, ExhaustedRetriesRaiseUnavailable) {
  const ImageShape s{2, 2, 1};
  StubOptions opts;
  opts.fail_first = 10;
  StubServer server([](const ImageTensor&) { return LabelSet::single("pos"); }, opts);
  server.start();
  RemoteOracle oracle(server.endpoint(), s, fast_options(2));
  QueryLedger ledger;
  EXPECT_THROW(query(oracle, ImageTensor(s, 0.5), ledger), RemoteUnavailable);
  EXPECT_EQ(ledger.total_queries(), 0u);
  EXPECT_EQ(oracle.attempts(), 3u);
}

TEST(RemoteOracle, NothingListening) {
  int port = 0;
  {
    StubServer server([](const ImageTensor&) { return LabelSet::single("pos"); });
    port = server.start();
  }
  const ImageShape s{2, 2, 1};
  RemoteOracle oracle("http://127.0.0.1:" + std::to_string(port), s, fast_options(1));
  QueryLedger ledger;
  EXPECT_THROW(query(oracle, ImageTensor(s, 0.5), ledger), RemoteUnavailable);
  EXPECT_EQ(ledger.total_queries(), 0u);
}

TEST(RemoteOracle, ScoresAreIgnored) {
  const ImageShape s{2, 2, 1};
  StubOptions opts;
  opts.include_scores = true;
  StubServer server([](const ImageTensor&) { return LabelSet({{"a", 1}, {"b", 2}}); }, opts);
  server.start();
  RemoteOracle oracle(server.endpoint(), s, fast_options(0));
  EXPECT_EQ(oracle.classify(ImageTensor(s, 0.5)), LabelSet({{"a", 1}, {"b", 2}}));
  EXPECT_NE(server.response_bodies().front().find("score"), std::string::npos);
}

TEST(RemoteOracle, BadRequestIsProtocolError) {
  // The stub answers 400 when the classifier rejects the input.
  StubServer server(linear_oracle(PerturbationVector(ImageShape{3, 3, 1}, 1.0), 0.0));
  server.start();
  RemoteOracle oracle(server.endpoint(), ImageShape{2, 2, 1}, fast_options(2));
  EXPECT_THROW(oracle.classify(ImageTensor(ImageShape{2, 2, 1}, 0.5)), ProtocolError);
  EXPECT_EQ(oracle.attempts(), 1u);
}
