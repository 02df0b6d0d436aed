import re
import xml.etree.ElementTree as ET

import pytest

from sceneforge.caption_codec import parse_caption
from sceneforge.fixtures import GOLDEN_BODY
from sceneforge.supervision import CaptionDocument, GroundTruthEvent, TimeSegment
from sceneforge.timeline import Layout, render_timeline

NS = {"svg": "http://www.w3.org/2000/svg"}


def lanes(svg: str):
    return ET.fromstring(svg).findall("svg:g[@class='lane']", NS)


def test_golden_document_has_three_lanes():
    svg = render_timeline(parse_caption(GOLDEN_BODY, duration_s=10.0))
    groups = lanes(svg)
    assert [g.get("data-tag") for g in groups] == ["music", "sfx", "sfx"]
    assert groups[1].find("svg:text", NS).text == "[sfx] A dog barks aggressively"


def test_bar_geometry_within_one_pixel():
    layout = Layout()
    svg = render_timeline(parse_caption(GOLDEN_BODY, duration_s=10.0), layout=layout)
    scale = layout.plot_width / 10.0
    expected = [(0.0, 10.0), (0.5, 2.3), (5.0, 5.5)]
    for group, (a, b) in zip(lanes(svg), expected):
        [rect] = group.findall("svg:rect", NS)
        assert float(rect.get("x")) == pytest.approx(layout.margin_left + a * scale, abs=1.0)
        assert float(rect.get("width")) == pytest.approx((b - a) * scale, abs=1.0)
        assert (float(rect.get("data-start")), float(rect.get("data-end"))) == (a, b)


def test_multi_segment_event_draws_one_rect_per_segment():
    event = GroundTruthEvent("speech", "A & B <talk>", (TimeSegment(0, 1), TimeSegment(2, 3), TimeSegment(4, 5)))
    svg = render_timeline(CaptionDocument.from_events([event], None, 6.0))
    [group] = lanes(svg)
    assert len(group.findall("svg:rect", NS)) == 3
    assert group.find("svg:text", NS).text == "[speech] A & B <talk>"


def test_empty_document_renders_axis_only():
    svg = render_timeline(CaptionDocument.from_events([]), duration_s=5.0)
    root = ET.fromstring(svg)
    assert lanes(svg) == []
    axis = root.find("svg:g[@class='axis']", NS)
    assert axis is not None and len(axis.findall("svg:text", NS)) >= 2


def test_duration_override_stretches_axis():
    doc = parse_caption(GOLDEN_BODY, duration_s=10.0)
    svg = render_timeline(doc, duration_s=20.0)
    labels = [t.text for t in ET.fromstring(svg).find("svg:g[@class='axis']", NS).findall("svg:text", NS)]
    assert labels[-1] == "20s"
    assert not re.search(r"NaN|inf", svg)
