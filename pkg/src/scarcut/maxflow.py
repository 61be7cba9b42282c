"""Dinic max-flow on real capacities."""

from collections import deque


class FlowGraph:
    """Residual network; arc ``e`` and its reverse are stored at ``e`` and ``e ^ 1``."""

    def __init__(self, n):
        self.n = n
        self.adj = [[] for _ in range(n)]
        self.to = []
        self.cap = []
        self.max_cap = 0.0

    def add_edge(self, u, v, cap, rev_cap=0.0):
        if cap < 0 or rev_cap < 0:
            raise ValueError("capacities must be non-negative")
        self.adj[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(float(cap))
        self.adj[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(float(rev_cap))
        self.max_cap = max(self.max_cap, cap, rev_cap)

    def _tol(self):
        return 1e-12 * (1.0 + self.max_cap)

    def _levels(self, s, t, tol):
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        to, cap, adj = self.to, self.cap, self.adj
        while q:
            u = q.popleft()
            for e in adj[u]:
                v = to[e]
                if level[v] < 0 and cap[e] > tol:
                    level[v] = level[u] + 1
                    q.append(v)
        return level if level[t] >= 0 else None

    def max_flow(self, s, t):
        tol = self._tol()
        to, cap, adj = self.to, self.cap, self.adj
        total = 0.0
        while True:
            level = self._levels(s, t, tol)
            if level is None:
                return total
            it = [0] * self.n
            path = []
            u = s
            while True:
                if u == t:
                    f = min(cap[e] for e in path)
                    for e in path:
                        cap[e] -= f
                        cap[e ^ 1] += f
                    total += f
                    k = next(i for i, e in enumerate(path) if cap[e] <= tol)
                    del path[k:]
                    u = s if not path else to[path[-1]]
                    continue
                edges = adj[u]
                i = it[u]
                lu = level[u] + 1
                while i < len(edges):
                    e = edges[i]
                    if cap[e] > tol and level[to[e]] == lu:
                        break
                    i += 1
                it[u] = i
                if i < len(edges):
                    e = edges[i]
                    path.append(e)
                    u = to[e]
                    continue
                if u == s:
                    break
                level[u] = -1
                e = path.pop()
                u = to[e ^ 1]
                it[u] += 1

    def reaches(self, t):
        """Boolean list: node has a residual path to ``t``."""
        tol = self._tol()
        seen = [False] * self.n
        seen[t] = True
        q = deque([t])
        to, cap, adj = self.to, self.cap, self.adj
        while q:
            x = q.popleft()
            for e in adj[x]:
                w = to[e]
                if not seen[w] and cap[e ^ 1] > tol:
                    seen[w] = True
                    q.append(w)
        return seen
