"""The eight model variants: channel counts, embedding sources, trainability."""

from dataclasses import dataclass

from .embeddings import build_channel
from .errors import DataError

SOURCE_RAND = "rand"
SOURCE_WIKI = "wiki"
SOURCE_ACL = "acl"


@dataclass(frozen=True)
class ChannelPlan:
    source: str   # rand | wiki | acl
    trainable: bool


@dataclass(frozen=True)
class VariantSpec:
    name: str
    channels: tuple

    @property
    def pretrained_source(self):
        """The single pretrained source this variant needs, or None."""
        for plan in self.channels:
            if plan.source != SOURCE_RAND:
                return plan.source
        return None


def _single(name, source):
    return VariantSpec(name, (ChannelPlan(source, trainable=True),))


def _multi(name, first, second):
    # first channel static, second fine-tuned
    return VariantSpec(name, (ChannelPlan(first, trainable=False),
                              ChannelPlan(second, trainable=True)))


VARIANTS = {spec.name: spec for spec in (
    _single("cnn.rand", SOURCE_RAND),
    _single("cnn.wiki-w2v", SOURCE_WIKI),
    _single("cnn.acl-w2v", SOURCE_ACL),
    _multi("cnn.multi.rand", SOURCE_RAND, SOURCE_RAND),
    _multi("cnn.multi.wiki-w2v", SOURCE_WIKI, SOURCE_WIKI),
    _multi("cnn.multi.acl-w2v", SOURCE_ACL, SOURCE_ACL),
    _multi("cnn.multi.wiki-w2v.rand", SOURCE_WIKI, SOURCE_RAND),
    _multi("cnn.multi.acl-w2v.rand", SOURCE_ACL, SOURCE_RAND),
)}


def get_variant(name):
    spec = VARIANTS.get(name)
    if spec is None:
        raise DataError(f"unknown variant {name!r}; valid names: "
                        + ", ".join(sorted(VARIANTS)))
    return spec


def build_variant_channels(spec, vocab, pretrained, seed, dim):
    """Materialize the variant's embedding channels for one vocabulary.

    pretrained is the loaded (vectors, d) pair for the variant's pretrained
    source, or None; dim applies to purely random channels.  Channel i draws
    from the derived seed [seed, 10 + i] so the two channels differ.
    """
    if spec.pretrained_source is not None and pretrained is None:
        raise DataError(f"variant {spec.name} needs {spec.pretrained_source} vectors "
                        f"but no embedding file was given")
    if pretrained is not None:
        if dim is not None and dim != pretrained[1]:
            raise DataError(f"requested dimension {dim} but vector file has {pretrained[1]}")
        dim = pretrained[1]
    elif dim is None:
        raise DataError("embedding dimension is required for fully random variants")
    channels = []
    for i, plan in enumerate(spec.channels):
        source = None if plan.source == SOURCE_RAND else pretrained
        channels.append(build_channel(vocab, source, trainable=plan.trainable,
                                      seed=[seed, 10 + i], dim=dim))
    return channels
