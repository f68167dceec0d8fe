"""
Synthetic e-shop traffic: a desk-scale stand-in for CSIC-style corpora.

Normal requests are drawn from shop templates (catalogue, cart, login,
registration, static files), sent as GET or POST with form bodies.
Anomalies reuse the same templates with one parameter value carrying an
attack payload. Every payload family contributes tokens listed in
PAYLOAD_TOKENS, and none of those substrings can occur in normal traffic.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np

from .request_parser import literalize_crlf
from .schemas import Corpus, HttpRequestDoc, SyntheticSpec

log = logging.getLogger("reqvec.synthetic")

PAYLOADS: Dict[str, Tuple[str, ...]] = {
    "sqli": (
        "%27%3B+DROP+TABLE+usuarios%3B+SELECT+*+FROM+datos+WHERE+nombre+LIKE+%27%25",
        "%27+UNION+SELECT+login%2C+pwd+FROM+usuarios+WHERE+%271%27%3D%271",
        "1%27+AND+1%3D0+UNION+SELECT+*+FROM+datos--",
    ),
    "xss": (
        "%3Cscript%3Ealert%28%22Paros%22%29%3B%3C%2Fscript%3E",
        "%22%3E%3Cscript%3Ealert%28document.cookie%29%3C%2Fscript%3E",
    ),
    "traversal": (
        "..%2F..%2F..%2F..%2F..%2Fetc%2Fpasswd",
        "%2F..%2F..%2F..%2Fetc%2Fpasswd%00",
    ),
    "ssi": (
        "%3C%21--%23exec+cmd%3D%22rm+-rf+%2F%3Bcat+%2Fetc%2Fpasswd%22+--%3E",
        "%22%3E%3C%21--%23EXEC+cmd%3D%22dir+%22--%3E%3C",
    ),
    # Raw CR/LF inside the value; literalized like the csic profile does.
    "crlf": (
        "carrito\r\nSet-Cookie%3A+injected%3Dtrue",
        "1\r\nLocation%3A+http%3A%2F%2Finjected.example%2F",
    ),
}

# Substrings that appear only in anomalous documents.
PAYLOAD_TOKENS: Tuple[str, ...] = (
    "DROP",
    "TABLE",
    "SELECT",
    "FROM",
    "WHERE",
    "LIKE",
    "UNION",
    "script",
    "alert",
    "passwd",
    "exec",
    "EXEC",
    "injected",
)

PRODUCTS = (
    "Jam%F3n+Ib%E9rico",
    "Queso+Manchego",
    "Vino+Rioja",
    "Aceite+de+Oliva",
    "Chorizo+Ib%E9rico",
    "Turr%F3n+de+Jijona",
    "Azafr%E1n",
)
NAMES = ("Mar%EDa", "Carlos", "Luc%EDa", "Javier", "Elena", "Pablo", "Marta")
SURNAMES = ("Garc%EDa+L%F3pez", "Mart%EDn", "S%E1nchez+Ruiz", "Navarro", "Ortega")
CITIES = ("Madrid", "Sevilla", "Valencia", "Bilbao", "Zaragoza", "Granada")
PROVINCES = ("Madrid", "Sevilla", "Valencia", "Vizcaya", "Zaragoza", "Granada")
USERS = ("grimshaw", "ladrera", "olivares", "mbustos", "tcalvo", "ivilches")
IMAGES = ("1", "2", "3", "logo", "carrito", "fondo")
USER_AGENTS = (
    "Mozilla/5.0 (compatible; Konqueror/3.5; Linux) KHTML/3.5.8 (like Gecko)",
    "Mozilla/5.0 (X11; U; Linux i686; es-ES; rv:1.8.1.6) Gecko/20070725 Firefox/2.0.0.6",
)

BASE_HEADERS = (
    ("Pragma", "no-cache"),
    ("Cache-control", "no-cache"),
    (
        "Accept",
        "text/xml,application/xml,application/xhtml+xml,text/html;q=0.9,"
        "text/plain;q=0.8,image/png,*/*;q=0.5",
    ),
    ("Accept-Encoding", "x-gzip, x-deflate, gzip, deflate"),
    ("Accept-Charset", "utf-8, utf-8;q=0.5, *;q=0.5"),
    ("Accept-Language", "en"),
    ("Host", "localhost:8080"),
)


def _pick(rng: np.random.Generator, options):
    return options[int(rng.integers(len(options)))]


def _params(rng: np.random.Generator, page: str) -> List[Tuple[str, str]]:
    if page == "anadir.jsp":
        return [
            ("id", str(int(rng.integers(1, 10)))),
            ("nombre", _pick(rng, PRODUCTS)),
            ("precio", str(int(rng.integers(5, 120)))),
            ("cantidad", str(int(rng.integers(1, 99)))),
            ("B1", "A%F1adir+al+carrito"),
        ]
    if page == "autenticar.jsp":
        return [
            ("modo", "entrar"),
            ("login", _pick(rng, USERS)),
            ("pwd", "".join(_pick(rng, "abcdefghkmnpqrstuvwyz23456789") for _ in range(8))),
            ("remember", "on"),
            ("B1", "Entrar"),
        ]
    if page == "registro.jsp":
        name = _pick(rng, NAMES)
        return [
            ("modo", "registro"),
            ("login", _pick(rng, USERS)),
            ("nombre", name),
            ("apellidos", _pick(rng, SURNAMES)),
            ("email", f"{name.split('%')[0].lower()}{int(rng.integers(10, 99))}%40correo.es"),
            ("dni", f"{int(rng.integers(10000000, 99999999))}{_pick(rng, 'TRWAGMYFPDXBNJZSQVHLCKE')}"),
            ("ciudad", _pick(rng, CITIES)),
            ("cp", f"{int(rng.integers(1000, 52999)):05d}"),
            ("provincia", _pick(rng, PROVINCES)),
            ("B1", "Registrar"),
        ]
    if page == "vaciar.jsp":
        return [("B2", "Vaciar+carrito")]
    if page == "entrar.jsp":
        return [("errorMsg", "Credenciales+incorrectas")]
    if page == "caracteristicas.jsp":
        return [("id", str(int(rng.integers(1, 10))))]
    return []


PARAM_PAGES = (
    "anadir.jsp",
    "autenticar.jsp",
    "registro.jsp",
    "vaciar.jsp",
    "entrar.jsp",
    "caracteristicas.jsp",
)
STATIC_PATHS = ("/tienda1/index.jsp", "/tienda1/estilos.css")


def _build_request(
    rng: np.random.Generator, params: List[Tuple[str, str]], page: str, post: bool
) -> List[str]:
    path = f"/tienda1/publico/{page}" if page else _pick(rng, STATIC_PATHS)
    query = "&".join(f"{k}={v}" for k, v in params)
    method = "POST" if post and params else "GET"
    uri = f"http://localhost:8080{path}"
    if query and method == "GET":
        uri = f"{uri}?{query}"

    lines = [f"{method} {uri} HTTP/1.1", f"User-Agent: {_pick(rng, USER_AGENTS)}"]
    lines.extend(f"{name}: {value}" for name, value in BASE_HEADERS)
    session = "".join(_pick(rng, "0123456789ABCDEF") for _ in range(32))
    lines.append(f"Cookie: JSESSIONID={session}")
    if method == "POST":
        lines.append("Content-Type: application/x-www-form-urlencoded")
        lines.append(f"Content-Length: {len(query)}")
    lines.append("Connection: close")
    if method == "POST":
        lines.extend(["", query])
    return [literalize_crlf(line) for line in lines]


def _normal_request(rng: np.random.Generator) -> List[str]:
    if rng.random() < 0.15:
        if rng.random() < 0.5:
            return _build_static_image(rng)
        return _build_request(rng, [], "", post=False)
    page = _pick(rng, PARAM_PAGES)
    return _build_request(rng, _params(rng, page), page, post=rng.random() < 0.35)


def _build_static_image(rng: np.random.Generator) -> List[str]:
    lines = [
        f"GET http://localhost:8080/tienda1/imagenes/{_pick(rng, IMAGES)}.gif HTTP/1.1",
        f"User-Agent: {_pick(rng, USER_AGENTS)}",
    ]
    lines.extend(f"{name}: {value}" for name, value in BASE_HEADERS)
    lines.append("Connection: close")
    return lines


def _anomalous_request(rng: np.random.Generator, spec: SyntheticSpec) -> List[str]:
    page = _pick(rng, PARAM_PAGES)
    params = _params(rng, page)
    victim = int(rng.integers(len(params)))
    key, value = params[victim]
    if spec.planted_token is not None:
        params[victim] = (key, f"{value}+{spec.planted_token}")
    else:
        payload = _pick(rng, PAYLOADS[_pick(rng, spec.families)])
        # Either append to the legitimate value or replace it.
        params[victim] = (key, f"{value}{payload}" if rng.random() < 0.5 else payload)
    return _build_request(rng, params, page, post=rng.random() < 0.35)


def generate_synthetic_corpus(spec: SyntheticSpec) -> Corpus:
    """Deterministic templated corpus; same spec and seed give identical docs."""
    unknown = set(spec.families) - set(PAYLOADS)
    if unknown:
        raise ValueError(f"unknown payload families: {sorted(unknown)}")

    rng = np.random.default_rng(spec.seed)
    bodies: List[Tuple[str, List[str]]] = []
    for _ in range(spec.normal):
        bodies.append(("normal", _normal_request(rng)))
    for _ in range(spec.anomaly):
        bodies.append(("anomaly", _anomalous_request(rng, spec)))

    order = rng.permutation(len(bodies))
    docs = [
        HttpRequestDoc(
            id=f"{spec.id_prefix}-{spec.split}-{n:06d}",
            label=bodies[i][0],
            lines=bodies[i][1],
            source="synthetic/csic",
        )
        for n, i in enumerate(order)
    ]
    log.info(
        "Generated %d synthetic docs (%d normal, %d anomaly, seed=%d)",
        len(docs),
        spec.normal,
        spec.anomaly,
        spec.seed,
    )
    return Corpus(docs=docs, split=spec.split)
