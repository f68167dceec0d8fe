import pytest

from reqvec import request_parser
from reqvec.errors import EmptyInput, InvalidOption, MalformedRequestLine, UnknownProfile
from reqvec.schemas import HttpRequestDoc, NormalizationProfile


def make_doc(lines, doc_id="d-1", label="normal", source="csic/raw"):
    return HttpRequestDoc(id=doc_id, label=label, lines=lines, source=source)


def test_parse_splits_crlf_and_keeps_body_separator():
    raw = (
        b"POST http://localhost:8080/tienda1/publico/anadir.jsp HTTP/1.1\r\n"
        b"Content-Type: application/x-www-form-urlencoded\r\n"
        b"\r\n"
        b"id=3&cantidad=1\r\n\r\n"
    )
    doc = request_parser.parse_http_request(raw, doc_id="r1", label="normal")
    assert doc.lines == [
        "POST http://localhost:8080/tienda1/publico/anadir.jsp HTTP/1.1",
        "Content-Type: application/x-www-form-urlencoded",
        "",
        "id=3&cantidad=1",
    ]
    assert doc.id == "r1"
    assert doc.label == "normal"


def test_parse_bare_lf_request():
    doc = request_parser.parse_http_request(b"GET /index.html HTTP/1.0\nHost: a\n")
    assert doc.lines == ["GET /index.html HTTP/1.0", "Host: a"]


def test_parse_keeps_bare_lf_inside_crlf_request():
    raw = b"GET /a?x=1\nSet-Cookie:1 HTTP/1.1\r\nHost: a\r\n"
    doc = request_parser.parse_http_request(raw, mode="lines")
    assert doc.lines[0] == "GET /a?x=1\nSet-Cookie:1 HTTP/1.1"


def test_parse_empty_input_raises():
    with pytest.raises(EmptyInput):
        request_parser.parse_http_request(b"")
    with pytest.raises(EmptyInput):
        request_parser.parse_http_request(b"\r\n\r\n")


def test_parse_full_mode_requires_request_line():
    with pytest.raises(MalformedRequestLine):
        request_parser.parse_http_request(b"not a request\r\nHost: a\r\n")


def test_parse_lines_mode_accepts_fragments():
    doc = request_parser.parse_http_request(b"/only/a/path?q=1", mode="lines")
    assert doc.lines == ["/only/a/path?q=1"]


def test_undecodable_bytes_survive_decode_encode():
    raw = bytes(range(256))
    assert request_parser.encode_text(request_parser.decode_bytes(raw)) == raw


def test_parse_preserves_non_utf8_bytes():
    raw = b"GET /caf\xe9?x=\xff HTTP/1.1\r\nHost: a\r\n"
    doc = request_parser.parse_http_request(raw)
    assert request_parser.encode_text(doc.lines[0]) == b"GET /caf\xe9?x=\xff HTTP/1.1"


def test_header_helpers():
    lines = ["GET / HTTP/1.1", "Host: shop", "content-type: text/plain", "", "Host: body"]
    assert request_parser.header_block_end(lines) == 3
    assert request_parser.get_header(lines, "HOST") == "shop"
    assert request_parser.get_header(lines, "Content-Type") == "text/plain"
    assert request_parser.find_header(lines, "Cookie") is None
    # Only the header block is searched and pruned.
    assert request_parser.drop_headers(lines, ["host"]) == [
        "GET / HTTP/1.1",
        "content-type: text/plain",
        "",
        "Host: body",
    ]
    assert request_parser.has_body(lines)
    assert not request_parser.has_body(lines[:3])


class TestProfiles:
    def test_csic_literalizes_cr_lf(self):
        doc = make_doc(["GET /a?x=1\r\nSet-Cookie:1 HTTP/1.1", "Host: a"])
        out = request_parser.normalize_request(doc, NormalizationProfile(name="csic"))
        assert out.lines[0] == "GET /a?x=1\\r\\nSet-Cookie:1 HTTP/1.1"
        assert out.source == "csic/csic"

    def test_identity_is_unchanged(self):
        doc = make_doc(["GET / HTTP/1.1", "Host: a"])
        assert request_parser.normalize_request(doc, NormalizationProfile()) is doc

    def test_ump_keeps_first_line(self):
        doc = make_doc(["GET /x HTTP/1.1", "Host: a", "", "body"])
        out = request_parser.normalize_request(doc, NormalizationProfile(name="ump"))
        assert out.lines == ["GET /x HTTP/1.1"]

    def test_unknown_profile(self):
        doc = make_doc(["GET / HTTP/1.1"])
        with pytest.raises(UnknownProfile):
            request_parser.normalize_request(doc, NormalizationProfile(name="nope"))

    @pytest.mark.parametrize("name", ["csic", "ids2018", "ump_firstline", "identity"])
    def test_profiles_are_idempotent(self, name):
        doc = make_doc(
            [
                "GET /DVWA/vulnerabilities/xss/?name=%3Cb%3E\rx HTTP/1.1",
                "Host: 172.31.69.25",
                "Upgrade-Insecure-Requests: 1",
                "Cookie: a=b",
            ]
        )
        profile = NormalizationProfile(name=name, host_pool=("10.0.0.1", "shop.local"), seed=4)
        once = request_parser.normalize_request(doc, profile)
        twice = request_parser.normalize_request(once, profile)
        assert twice.lines == once.lines


class TestIds2018:
    POOL = ("10.0.0.1", "10.0.0.2", "intranet.local")

    def test_removes_capture_artifacts(self):
        doc = make_doc(
            [
                "GET /DVWA/vulnerabilities/xss/?name=x HTTP/1.1",
                "Host: 172.31.69.25",
                "Upgrade-Insecure-Requests: 1",
                "Accept: */*",
            ]
        )
        out = request_parser.ids2018_sanitize(doc, self.POOL, seed=1)
        assert out.lines[0] == "GET /?name=x HTTP/1.1"
        assert request_parser.get_header(out.lines, "Host") in self.POOL
        assert request_parser.find_header(out.lines, "Upgrade-Insecure-Requests") is None
        assert out.lines[-1] == "Accept: */*"

    def test_nested_prefixes_are_stripped(self):
        doc = make_doc(["GET /DVWA/dvwa/css/main.css HTTP/1.1"])
        out = request_parser.ids2018_sanitize(doc, self.POOL)
        assert out.lines[0] == "GET /css/main.css HTTP/1.1"

    def test_host_draw_is_deterministic_per_doc(self):
        doc = make_doc(["GET / HTTP/1.1", "Host: x"], doc_id="abc")
        a = request_parser.ids2018_sanitize(doc, self.POOL, seed=9)
        b = request_parser.ids2018_sanitize(doc, self.POOL, seed=9)
        assert a.lines == b.lines

    def test_default_profile_removes_artifacts_without_pool(self):
        doc = make_doc(
            [
                "GET /DVWA/vulnerabilities/xss/?q=1 HTTP/1.1",
                "Host: 1.2.3.4",
                "Upgrade-Insecure-Requests: 1",
            ]
        )
        out = request_parser.normalize_request(doc, NormalizationProfile(name="ids2018"))
        assert out.lines == ["GET /?q=1 HTTP/1.1", "Host: 1.2.3.4"]
        assert out.source.endswith("/ids2018")

    @pytest.mark.parametrize(
        "uri, expected",
        [
            ("/DVWA/vulnerabilities/xss/?q=1", "/?q=1"),
            ("/DVWA", "/"),
            ("/DVWA?x=1", "/?x=1"),
            ("/DVWA/login.php", "/login.php"),
            ("/DVWAx/foo", "/DVWAx/foo"),
            ("/DVWA_backup", "/DVWA_backup"),
            ("/DVWA/dvwax/a", "/dvwax/a"),
            ("/shop/DVWA/a", "/shop/DVWA/a"),
        ],
    )
    def test_prefixes_match_whole_segments(self, uri, expected):
        doc = make_doc([f"GET {uri} HTTP/1.1"])
        out = request_parser.normalize_request(doc, NormalizationProfile(name="ids2018"))
        assert out.lines[0] == f"GET {expected} HTTP/1.1"

    def test_empty_pool_rejected(self):
        with pytest.raises(InvalidOption):
            request_parser.ids2018_sanitize(make_doc(["GET / HTTP/1.1"]), ())

    def test_text_payload_filter(self):
        types = NormalizationProfile().text_content_types
        form = make_doc(
            ["POST / HTTP/1.1", "Content-Type: application/x-www-form-urlencoded", "", "a=1"]
        )
        binary = make_doc(["POST / HTTP/1.1", "Content-Type: image/png", "", "PNG"])
        bodyless = make_doc(["GET / HTTP/1.1", "Host: a"])
        assert request_parser.has_text_payload(form, types)
        assert not request_parser.has_text_payload(binary, types)
        assert request_parser.has_text_payload(bodyless, types)
