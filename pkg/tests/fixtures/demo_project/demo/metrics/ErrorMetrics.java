package demo.metrics;

public class ErrorMetrics {

    private Counter clientErrors;
    private Counter serverErrors;

    public void clientErrorEncountered() {
        clientErrors.incr();
    }

    // consistent name: serverErrorEncountered
    public void serverErrorOccured() {
        serverErrors.incr();
    }
}
