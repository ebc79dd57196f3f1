#include "qser/zoo.hpp"

#include <gtest/gtest.h>

#include "qser/errors.hpp"

using qser::Rng;
using qser::Shape;
using qser::Tensor;
namespace zoo = qser::zoo;
using zoo::Mode;

namespace {

Tensor<float> random_input(const zoo::ArchSpec& spec, std::size_t batch, Rng& rng)
{
    Shape s{batch};
    for (auto d : spec.input_shape())
        s.push_back(d);
    Tensor<float> t(s);
    for (auto& v : t.data())
        v = static_cast<float>(rng.uniform(0.0, 1.0));
    return t;
}

}  // namespace

TEST(Audit, Vgg16RatioNearSixPercent)
{
    const auto r = zoo::audit_params(zoo::vgg16(Mode::real));
    const auto q = zoo::audit_params(zoo::vgg16(Mode::quaternion));
    const double ratio = q.ratio_to(r);
    EXPECT_GE(ratio, 0.05);
    EXPECT_LE(ratio, 0.08);
}

TEST(Audit, AlexNetAndResNetNearQuarter)
{
    for (auto make : {zoo::alexnet, zoo::resnet50}) {
        const auto r = zoo::audit_params(make(Mode::real, 4));
        const auto q = zoo::audit_params(make(Mode::quaternion, 4));
        EXPECT_GE(q.ratio_to(r), 0.20) << r.arch;
        EXPECT_LE(q.ratio_to(r), 0.30) << r.arch;
    }
}

TEST(Audit, ResNet50RealMatchesReferenceCount)
{
    // torchvision resnet50 has 25,557,032 parameters with 1000 classes and
    // 3 input channels; one input channel removes 2*64*49 and a 4-way head
    // removes 996*2049.
    const auto a = zoo::audit_params(zoo::resnet50(Mode::real, 4));
    EXPECT_EQ(a.total, 25557032u - 2u * 64u * 49u - 996u * 2049u);
}

TEST(Audit, AlexNetRealMatchesReferenceCount)
{
    // torchvision alexnet: 61,100,840 parameters at 3 channels / 1000 classes.
    const auto a = zoo::audit_params(zoo::alexnet(Mode::real, 4));
    EXPECT_EQ(a.total, 61100840u - 2u * 64u * 121u - 996u * 4097u);
}

TEST(Audit, EqualsAllocatedCountForMiniNetworks)
{
    for (const auto& name : {"mini-cnn", "mini-vgg", "mini-alexnet", "mini-resnet"})
        for (auto mode : {Mode::real, Mode::quaternion}) {
            const auto spec = zoo::by_name(name, mode);
            Rng rng(3);
            auto net = zoo::build<float>(spec, rng);
            EXPECT_EQ(zoo::audit_params(spec).total, net->parameter_count()) << name << " " << zoo::to_string(mode);
        }
}

TEST(Audit, MiniNetworksAreSmall)
{
    for (const auto& name : {"mini-cnn", "mini-vgg", "mini-alexnet", "mini-resnet"})
        for (auto mode : {Mode::real, Mode::quaternion})
            EXPECT_LT(zoo::audit_params(zoo::by_name(name, mode)).total, 100000u) << name;
}

TEST(Audit, ResNet50EqualsAllocatedCount)
{
    // The largest body that is cheap enough to allocate in a unit test.
    for (auto mode : {Mode::real, Mode::quaternion}) {
        const auto spec = zoo::resnet50(mode);
        Rng rng(1);
        auto net = zoo::build<float>(spec, rng);
        EXPECT_EQ(zoo::audit_params(spec).total, net->parameter_count());
    }
}

TEST(Build, ForwardShapesForMiniNetworks)
{
    qser::nn::Context ctx;
    for (const auto& name : {"mini-cnn", "mini-vgg", "mini-alexnet", "mini-resnet"})
        for (auto mode : {Mode::real, Mode::quaternion}) {
            const auto spec = zoo::by_name(name, mode, 3);
            Rng rng(5);
            auto net = zoo::build<float>(spec, rng);
            const auto y = net->forward(random_input(spec, 2, rng), ctx);
            EXPECT_EQ(y.shape(), (Shape{2, 3})) << name;
        }
}

TEST(Build, RejectsWrongInputShape)
{
    Rng rng(1);
    auto net = zoo::build<float>(zoo::mini_cnn(Mode::quaternion), rng);
    qser::nn::Context ctx;
    EXPECT_THROW(net->forward(Tensor<float>({1, 1, 512, 128}), ctx), qser::ShapeError);
}

TEST(Build, FinalLayerIsRealInQuaternionMode)
{
    const auto spec = zoo::mini_cnn(Mode::quaternion, 4);
    Rng rng(2);
    auto net = zoo::build<float>(spec, rng);
    bool found = false;
    for (const auto& nt : net->named_tensors()) {
        if (nt.name == "final.weight") {
            found = true;
            // A real dense layer stores one [out, in] matrix of full width.
            EXPECT_EQ(nt.tensor.dim(0), 4u);
        }
        if (nt.name.rfind("final.", 0) == 0)
            EXPECT_EQ(nt.name.find("_r"), std::string::npos) << nt.name;
    }
    EXPECT_TRUE(found);
}

TEST(Validate, RejectsIndivisibleQuaternionChannels)
{
    auto spec = zoo::mini_cnn(Mode::real);
    spec.layers[0].out = 6;
    EXPECT_NO_THROW(zoo::validate(spec));
    spec.mode = Mode::quaternion;
    EXPECT_THROW(zoo::validate(spec), qser::ConfigError);
}

TEST(Validate, RejectsSpecWithoutDense)
{
    auto spec = zoo::mini_cnn(Mode::real);
    spec.layers.pop_back();
    EXPECT_THROW(zoo::validate(spec), qser::ConfigError);
}

TEST(Validate, ByNameRejectsUnknown)
{
    EXPECT_THROW(zoo::by_name("lenet", Mode::real), qser::ConfigError);
}

TEST(Spec, JsonRoundTripKeepsFingerprint)
{
    for (const auto& name : zoo::shipped_names()) {
        const auto spec = zoo::by_name(name, Mode::quaternion, 7);
        const auto back = zoo::ArchSpec::from_json(spec.to_json());
        EXPECT_EQ(back.fingerprint(), spec.fingerprint()) << name;
        EXPECT_EQ(zoo::audit_params(back).total, zoo::audit_params(spec).total) << name;
    }
}

TEST(Spec, BodyFingerprintIgnoresClassCount)
{
    const auto a = zoo::mini_vgg(Mode::real, 4);
    const auto b = zoo::mini_vgg(Mode::real, 2);
    EXPECT_EQ(a.body_fingerprint(), b.body_fingerprint());
    EXPECT_NE(a.fingerprint(), b.fingerprint());
    EXPECT_NE(a.body_fingerprint(), zoo::mini_vgg(Mode::quaternion, 4).body_fingerprint());
}

TEST(TransferInit, NonFinalTensorsBitEqualFinalKeepsInit)
{
    Rng rng_src(11), rng_dst(12);
    auto src = zoo::build<float>(zoo::mini_resnet(Mode::quaternion, 2), rng_src);
    auto dst = zoo::build<float>(zoo::mini_resnet(Mode::quaternion, 4), rng_dst);
    const auto fresh = qser::ckpt::capture(*dst, "");
    const auto source = qser::ckpt::capture(*src, src->spec().fingerprint());
    zoo::transfer_init(*dst, source, true);
    for (const auto& nt : dst->named_tensors()) {
        const auto* want = nt.name.rfind("final.", 0) == 0 ? fresh.find(nt.name) : source.find(nt.name);
        ASSERT_NE(want, nullptr) << nt.name;
        EXPECT_EQ(nt.tensor.values(), want->values()) << nt.name;
    }
}

TEST(TransferInit, RejectsDifferentBody)
{
    Rng rng(1);
    auto a = zoo::build<float>(zoo::mini_cnn(Mode::real), rng);
    auto b = zoo::build<float>(zoo::mini_vgg(Mode::real), rng);
    EXPECT_THROW(zoo::transfer_init(*b, qser::ckpt::capture(*a, a->spec().fingerprint()), true), qser::DataError);
}

TEST(TransferInit, FullRequiresMatchingClassCount)
{
    Rng rng(1);
    auto a = zoo::build<float>(zoo::mini_cnn(Mode::real, 2), rng);
    auto b = zoo::build<float>(zoo::mini_cnn(Mode::real, 4), rng);
    const auto src = qser::ckpt::capture(*a, a->spec().fingerprint());
    EXPECT_THROW(zoo::transfer_init(*b, src, false), qser::DataError);
    EXPECT_NO_THROW(zoo::transfer_init(*b, src, true));
}
