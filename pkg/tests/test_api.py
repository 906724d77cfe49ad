"""
Tests for the HTTP clustering service.
"""

import pytest
from fastapi.testclient import TestClient

from app.main import app


@pytest.fixture
def client():
    return TestClient(app)


class TestHealth:
    """Test cases for the health endpoint."""

    def test_health(self, client):
        """Test the health payload."""
        response = client.get("/health")

        assert response.status_code == 200
        assert response.json() == {"status": "healthy", "service": "Orchestra Simulator"}


class TestClusterEndpoint:
    """Test cases for POST /api/clustering/cluster."""

    def test_balanced_clusters(self, client):
        """Test that two groups of points come back as two equal clusters."""
        points = [[1.0, 0.05], [1.0, -0.05], [0.05, 1.0], [-0.05, 1.0]]

        response = client.post("/api/clustering/cluster", json={"points": points, "num_clusters": 2})

        assert response.status_code == 200
        body = response.json()
        assert sorted(body["cluster_sizes"]) == [2, 2]
        assert body["assignment"][0] == body["assignment"][1]
        assert len(body["centroids"]) == 2
        assert body["delta"] is not None

    def test_too_many_clusters(self, client):
        """Test that n < G is a bad request."""
        response = client.post("/api/clustering/cluster", json={"points": [[1.0, 0.0]], "num_clusters": 2})

        assert response.status_code == 400

    def test_ragged_points(self, client):
        """Test that rows of different length are rejected."""
        response = client.post(
            "/api/clustering/cluster", json={"points": [[1.0, 0.0], [1.0]], "num_clusters": 1}
        )

        assert response.status_code == 422

    def test_invalid_epsilon(self, client):
        """Test request validation of the Sinkhorn settings."""
        response = client.post(
            "/api/clustering/cluster",
            json={"points": [[1.0, 0.0]], "num_clusters": 1, "epsilon": 0.0},
        )

        assert response.status_code == 422

    def test_underflow_is_server_error(self, client):
        """Test that a Sinkhorn underflow maps to 500 with the epsilon hint."""
        points = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]

        response = client.post(
            "/api/clustering/cluster", json={"points": points, "num_clusters": 2, "epsilon": 1e-4}
        )

        assert response.status_code == 500
        assert "epsilon" in response.json()["detail"]


class TestBoundsEndpoint:
    """Test cases for POST /api/clustering/bounds."""

    def test_consistent_gap(self, client):
        """Test prop1, prop2 and their gap at c = 1."""
        response = client.post("/api/clustering/bounds", json={"delta": 0.0, "c": 1.0, "G": 10, "N": 100})

        body = response.json()
        assert response.status_code == 200
        assert body["prop1"] == pytest.approx(100 / 99 / 10)
        assert body["prop2"] == pytest.approx(0.1)
        assert body["gap"] == pytest.approx(10 / (100 * 99))

    def test_invalid_symbols(self, client):
        """Test that G < 2 is rejected."""
        response = client.post("/api/clustering/bounds", json={"delta": 0.0, "G": 1, "N": 100})

        assert response.status_code == 422


class TestAnonymityEndpoint:
    """Test cases for GET /api/clustering/kanonymity."""

    def test_level(self, client):
        """Test N_k=128, L=8."""
        response = client.get("/api/clustering/kanonymity", params={"shard_size": 128, "local_clusters": 8})

        assert response.status_code == 200
        assert response.json()["anonymity"] == 16

    def test_more_clusters_than_samples(self, client):
        """Test that N_k < L is a bad request."""
        response = client.get("/api/clustering/kanonymity", params={"shard_size": 3, "local_clusters": 4})

        assert response.status_code == 400
