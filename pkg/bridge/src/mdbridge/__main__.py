"""Command-line entry: host models (or an echo double) behind the protocol."""

from __future__ import annotations

import argparse
import logging
import sys

from .adapters import load_factory
from .server import BridgeConfig, serve


def _parse_listen(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"--listen needs host:port, got {value!r}")
    return host, int(port)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mdbridge",
        description="Serve a latent denoiser, tag extractor, and perceptual scorer "
        "over the tilesr wire protocol.",
    )
    parser.add_argument("--listen", type=_parse_listen, default=("127.0.0.1", 9400), metavar="HOST:PORT")
    parser.add_argument("--echo", action="store_true", help="Identity-echo mode, no models loaded.")
    parser.add_argument("--denoiser", metavar="MODULE:FACTORY", help="Denoiser adapter factory.")
    parser.add_argument("--tagger", metavar="MODULE:FACTORY", help="Tag-extractor adapter factory.")
    parser.add_argument("--metric", metavar="MODULE:FACTORY", help="Perceptual-metric adapter factory.")
    parser.add_argument("--window", type=int, default=64, help="Declared window size in latent cells.")
    parser.add_argument("--channels", type=int, default=4, help="Declared latent channel count.")
    parser.add_argument("--tag-reply", default="", help="Fixed tags reply in echo mode.")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)

    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    log = logging.getLogger("mdbridge")

    if args.echo and (args.denoiser or args.tagger or args.metric):
        parser.error("--echo excludes adapter options")
    if not args.echo and not (args.denoiser or args.tagger or args.metric):
        log.warning("no adapters configured; running in identity-echo mode")

    try:
        denoiser = load_factory(args.denoiser) if args.denoiser else None
        config = BridgeConfig(
            host=args.listen[0],
            port=args.listen[1],
            # the wrapped model's true latent geometry wins over flag defaults
            window_width=denoiser.window_width if denoiser else args.window,
            window_height=denoiser.window_height if denoiser else args.window,
            channels=denoiser.channels if denoiser else args.channels,
            denoiser=denoiser,
            tagger=load_factory(args.tagger) if args.tagger else None,
            metric=load_factory(args.metric) if args.metric else None,
            echo_tag_reply=args.tag_reply,
        )
    except Exception as exc:
        log.error("cannot load adapters error=%r", str(exc))
        return 2

    server = serve(config)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        log.info("shutting down")
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
