import pytest
from fastapi.testclient import TestClient

from kfra.tools.protocol import PROTOCOL_VERSION, VERSION_HEADER, ToolResponse

from toolserver import create_app


class AsgiTransport:
    """Drives the app in process while presenting the engine transport API."""

    def __init__(self, client: TestClient):
        self.client = client
        self.headers = {VERSION_HEADER: PROTOCOL_VERSION}
        self.send_count = 0

    def send(self, request, timeout_s):
        self.send_count += 1
        resp = self.client.post(
            f"/v1/{request.kind}", json=request.to_dict(), headers=self.headers
        )
        if resp.status_code != 200:
            raise RuntimeError(f"HTTP {resp.status_code}: {resp.text}")
        return ToolResponse.from_dict(resp.json())

    def ping(self):
        resp = self.client.post("/v1/ping", json={}, headers=self.headers)
        return resp.status_code == 200 and resp.json().get("ok") is True, 0.0


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture(scope="module")
def transport(client):
    return AsgiTransport(client)
