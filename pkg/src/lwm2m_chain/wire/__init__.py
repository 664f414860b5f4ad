"""Mini-CoAP codec, PSK handshake and the sealed UDP transport."""
